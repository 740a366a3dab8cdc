use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use treetune::autotune::{TuningReport, DEFAULT_T_MAX};
use treetune::bench::{bench_autotuned, run_bench, BenchGrid, BenchOptions};
use treetune::dataset::{load_vectors, recall, save_vectors, split_queries};
use treetune::fixture::standard_fixture;
use treetune::timemodel::PredictorRange;
use treetune::trees::{max_depth, FOREST_MAGIC, FOREST_VERSION};
use treetune::{
    fit_time_model, generate_index_auto, grow_forest, select_parameters, subset_index, Calibration, DataMatrix, Forest,
    GroundTruth, SearchParams, Searcher, SplitRule, Target, TimeModel, TreeKind, TuningLimits, VectorFormat,
};

use crate::{
    AutotuneArgs, BenchArgs, BuildArgs, CliError, FixtureArgs, GroundtruthArgs, InspectArgs, QueryArgs, SplitArgs,
};

const DEFAULT_K: usize = 10;
const DEFAULT_SEED: u64 = 0;
const DEFAULT_TREES: usize = 10;
const DEFAULT_PASSES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Text,
    Csv,
    Json,
}

fn usage<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(msg.into()))
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("missing --{flag}")))
}

fn positive(value: usize, flag: &str) -> Result<usize, CliError> {
    if value == 0 {
        return usage(format!("--{flag} must be positive"));
    }
    Ok(value)
}

/// Parses `--format`; `text` is accepted only where it is the default.
fn output_format(flag: Option<&str>, default: Format) -> Result<Format, CliError> {
    match flag {
        None => Ok(default),
        Some("text") if default == Format::Text => Ok(Format::Text),
        Some("csv") => Ok(Format::Csv),
        Some("json") => Ok(Format::Json),
        Some(other) => usage(format!("unknown --format '{other}' (expected csv or json)")),
    }
}

fn vector_format(path: &Path, flag: Option<&str>) -> Result<VectorFormat, CliError> {
    match flag {
        Some(f) => f.parse().map_err(|e: treetune::Error| CliError::Usage(e.to_string())),
        None => VectorFormat::from_path(path).ok_or_else(|| {
            CliError::Usage(format!(
                "cannot infer the vector format of {}; pass --vector-format",
                path.display()
            ))
        }),
    }
}

fn load(path: &Path, flag: Option<&str>) -> Result<DataMatrix, CliError> {
    let format = vector_format(path, flag)?;
    load_vectors(path, format).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn save(data: &DataMatrix, path: &Path, flag: Option<&str>) -> Result<(), CliError> {
    let format = vector_format(path, flag)?;
    save_vectors(data, path, format).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn tree_kind(flag: Option<&str>) -> Result<TreeKind, CliError> {
    flag.unwrap_or("rp")
        .parse()
        .map_err(|e: treetune::Error| CliError::Usage(e.to_string()))
}

fn target(flag: &str) -> Result<Target, CliError> {
    flag.parse().map_err(|e: treetune::Error| CliError::Usage(e.to_string()))
}

/// A buffered writer on `path`, or on standard output.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json(value: &impl Serialize, path: Option<&Path>) -> Result<(), CliError> {
    let mut w = sink(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn load_model(path: &Path) -> Result<TimeModel, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    if let Ok(model) = TimeModel::from_json(&text) {
        return Ok(model);
    }
    let report: TuningReport = serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("{}: neither a time model nor a tuning report: {e}", path.display())))?;
    Ok(report.model)
}

/// Validates a tuning lattice against a corpus of `n` points, filling the
/// defaults.
fn limits(
    n: usize,
    k: usize,
    tmax: Option<usize>,
    lmin: Option<usize>,
    lmax: Option<usize>,
    vmax: Option<usize>,
) -> Result<TuningLimits, CliError> {
    let mut limits = TuningLimits::with_trees(n, k, tmax.unwrap_or(DEFAULT_T_MAX));
    if let Some(l) = lmax {
        limits.depth_max = l;
        if lmin.is_none() {
            limits.depth_min = l.saturating_sub(treetune::autotune::DEFAULT_DEPTH_SPAN).max(1);
        }
    }
    if let Some(l) = lmin {
        limits.depth_min = l;
    }
    limits.v_max = vmax.unwrap_or(limits.t_max);
    limits.validate(n).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(limits)
}

fn time_model(
    model: Option<&Path>,
    data: &DataMatrix,
    limits: &TuningLimits,
    rule: &SplitRule,
) -> Result<TimeModel, CliError> {
    if let Some(path) = model {
        return load_model(path);
    }
    let range = PredictorRange {
        n: data.n(),
        d: data.d(),
        k: limits.k,
        t_max: limits.t_max,
        depth_min: limits.depth_min,
        depth_max: limits.depth_max,
    };
    Ok(fit_time_model(&range, rule, &Calibration::default())?)
}

pub fn fixture(args: FixtureArgs) -> Result<(), CliError> {
    let out = required(args.out, "out")?;
    let fx = standard_fixture();
    save(&fx.corpus, &out, args.vector_format.as_deref())?;
    println!("corpus: {} x {} -> {}", fx.corpus.n(), fx.corpus.d(), out.display());
    if let Some(q) = args.queries {
        save(&fx.queries, &q, args.vector_format.as_deref())?;
        println!("queries: {} x {} -> {}", fx.queries.n(), fx.queries.d(), q.display());
    }
    Ok(())
}

pub fn split(args: SplitArgs) -> Result<(), CliError> {
    let path = required(args.data, "data")?;
    let dir = required(args.out, "out")?;
    let format = vector_format(&path, args.vector_format.as_deref())?;
    let data = load(&path, args.vector_format.as_deref())?;
    let (m_val, m_test) = (args.validation.unwrap_or(100), args.test.unwrap_or(100));
    if m_val + m_test >= data.n() {
        return usage(format!("cannot hold out {} of {} rows", m_val + m_test, data.n()));
    }
    let parts = split_queries(&data, m_val, m_test, args.seed.unwrap_or(DEFAULT_SEED))?;
    std::fs::create_dir_all(&dir)?;
    let ext = extension(format);
    for (name, part) in [
        ("corpus", &parts.train),
        ("validation", &parts.validation),
        ("test", &parts.test),
    ] {
        let p = dir.join(format!("{name}.{ext}"));
        save_vectors(part, &p, format)?;
        println!("{name}: {} rows -> {}", part.n(), p.display());
    }
    Ok(())
}

fn extension(format: VectorFormat) -> &'static str {
    match format {
        VectorFormat::Fvecs => "fvecs",
        VectorFormat::RawF32 => "f32",
        VectorFormat::Csv => "csv",
    }
}

pub fn groundtruth(args: GroundtruthArgs) -> Result<(), CliError> {
    let k = positive(required(args.k, "k")?, "k")?;
    let format = output_format(args.format.as_deref(), Format::Csv)?;
    let data = load(&required(args.data, "data")?, args.vector_format.as_deref())?;
    let queries = load(&required(args.queries, "queries")?, args.vector_format.as_deref())?;
    if k > data.n() {
        return usage(format!("--k {k} exceeds the corpus size {}", data.n()));
    }
    let truth = GroundTruth::compute(&data, &queries, k)?;
    match format {
        Format::Json => write_json(&truth, args.out.as_deref()),
        _ => {
            let mut w = sink(args.out.as_deref())?;
            truth.write_csv(&mut w)?;
            w.flush()?;
            Ok(())
        }
    }
}

pub fn build(args: BuildArgs) -> Result<(), CliError> {
    let kind = tree_kind(args.tree.as_deref())?;
    let out = required(args.out, "out")?;
    let trees = positive(args.trees.unwrap_or(DEFAULT_TREES), "trees")?;
    let data = load(&required(args.data, "data")?, args.vector_format.as_deref())?;
    let depth = args.depth.unwrap_or_else(|| max_depth(data.n()).saturating_sub(5).max(1));
    if depth == 0 || depth > max_depth(data.n()) {
        return usage(format!("--depth must lie in [1, {}]", max_depth(data.n())));
    }
    let start = Instant::now();
    let forest = grow_forest(&data, trees, depth, &SplitRule::new(kind), args.seed.unwrap_or(DEFAULT_SEED))?;
    let elapsed = start.elapsed().as_secs_f64();
    forest.save(&out)?;
    println!(
        "built {trees} {kind} trees of depth {depth} over {} points in {elapsed:.3}s -> {}",
        data.n(),
        out.display()
    );
    Ok(())
}

/// The tuning report plus the outcome of the selection.
#[derive(Serialize)]
struct AutotuneOutput {
    target: Target,
    target_met: bool,
    /// Set when no configuration meets the target and a fallback was
    /// selected.
    warning: Option<String>,
    index: Option<PathBuf>,
    #[serde(flatten)]
    report: TuningReport,
}

pub fn autotune(args: AutotuneArgs) -> Result<(), CliError> {
    let target = target(&required(args.target, "target")?)?;
    let kind = tree_kind(args.tree.as_deref())?;
    let k = positive(args.k.unwrap_or(DEFAULT_K), "k")?;
    let data = load(&required(args.data, "data")?, args.vector_format.as_deref())?;
    let queries = load(&required(args.queries, "queries")?, args.vector_format.as_deref())?;
    let limits = limits(data.n(), k, args.tmax, args.lmin, args.lmax, args.vmax)?;
    let rule = SplitRule::new(kind);
    let start = Instant::now();
    let model = time_model(args.model.as_deref(), &data, &limits, &rule)?;
    let calibration = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let tuned = generate_index_auto(&data, &queries, &limits, &rule, &model, args.seed.unwrap_or(DEFAULT_SEED))?;
    let selected = select_parameters(&tuned, target)?;
    let forest = subset_index(&tuned.forest, selected.trees, selected.depth)?;
    let wall = start.elapsed().as_secs_f64();

    if let Some(out) = &args.out {
        forest.save(out)?;
    }
    if let Some(path) = &args.estimates {
        let mut w = sink(Some(path))?;
        tuned.write_csv(&mut w)?;
        w.flush()?;
    }
    let warning = (!selected.target_met).then(|| match target {
        Target::Recall(e) => format!(
            "no configuration reaches estimated recall {e}; selected the highest ({:.3})",
            selected.est_recall
        ),
        Target::Time(t) => format!("no configuration fits {t:e} s per query; selected the fastest"),
    });
    if let Some(path) = &args.report {
        let output = AutotuneOutput {
            target,
            target_met: selected.target_met,
            warning: warning.clone(),
            index: args.out.clone(),
            report: tuned.report(Some(selected)),
        };
        write_json(&output, Some(path))?;
    }

    println!(
        "selected {kind}: T={} l={} v={}; estimated recall {:.3}, estimated time {:.2}us/query",
        selected.trees,
        selected.depth,
        selected.votes,
        selected.est_recall,
        selected.est_time * 1e6
    );
    println!(
        "tuning wall time {wall:.2}s (build {:.2}s, ground truth {:.2}s, counting {:.2}s); time model {calibration:.2}s",
        tuned.timings.build, tuned.timings.ground_truth, tuned.timings.counting
    );
    if let Some(w) = warning {
        eprintln!("warning: {w}");
    }
    Ok(())
}

pub fn query(args: QueryArgs) -> Result<(), CliError> {
    let k = positive(args.k.unwrap_or(DEFAULT_K), "k")?;
    let format = output_format(args.format.as_deref(), Format::Csv)?;
    let passes = positive(args.passes.unwrap_or(DEFAULT_PASSES), "passes")?;
    if args.branches.is_some() && (args.votes.is_some() || args.tuning.is_some()) {
        return usage("--branches selects priority search; it excludes --votes and --tuning");
    }
    let votes = match (&args.tuning, args.votes) {
        (Some(_), Some(_)) => return usage("give --votes or --tuning, not both"),
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            let report: TuningReport = serde_json::from_str(&text)?;
            required(report.selected, "tuning report with a selection")?.votes
        }
        (None, v) => v.unwrap_or(1),
    };
    let params = match args.branches {
        Some(b) => SearchParams::priority(k, b),
        None => SearchParams::voting(k, positive(votes, "votes")?),
    };

    let index = required(args.index, "index")?;
    let forest = Forest::load(&index).map_err(|e| CliError::Runtime(format!("{}: {e}", index.display())))?;
    let data = load(&required(args.data, "data")?, args.vector_format.as_deref())?;
    let queries = load(&required(args.queries, "queries")?, args.vector_format.as_deref())?;
    forest.check_corpus(&data)?;
    params.validate(&forest).map_err(|e| CliError::Usage(e.to_string()))?;
    if queries.d() != data.d() {
        return Err(CliError::Runtime(format!(
            "queries have {} dims, corpus has {}",
            queries.d(),
            data.d()
        )));
    }
    let truth = match &args.truth {
        Some(path) => {
            let t = GroundTruth::load_csv(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            if t.len() != queries.n() {
                return Err(CliError::Runtime(format!(
                    "{} ground-truth rows for {} queries",
                    t.len(),
                    queries.n()
                )));
            }
            Some(t)
        }
        None => None,
    };

    let mut searcher = Searcher::new(&forest, &data)?;
    let mut answers = Vec::with_capacity(queries.n());
    let mut times = Vec::with_capacity(passes);
    let start = Instant::now();
    for q in queries.rows() {
        answers.push(searcher.query(q, &params)?);
    }
    times.push(start.elapsed().as_secs_f64());
    for _ in 1..passes {
        let start = Instant::now();
        for q in queries.rows() {
            std::hint::black_box(searcher.query(q, &params)?);
        }
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let per_query = times[times.len() / 2] / queries.n().max(1) as f64;

    match format {
        Format::Json => write_json(&answers, args.out.as_deref())?,
        _ => {
            let mut w = sink(args.out.as_deref())?;
            for row in &answers {
                let line: Vec<String> = row.iter().map(u32::to_string).collect();
                writeln!(w, "{}", line.join(","))?;
            }
            w.flush()?;
        }
    }
    eprintln!(
        "{} queries, {:.2}us/query (median of {passes} passes)",
        queries.n(),
        per_query * 1e6
    );
    if let Some(truth) = truth {
        let kk = k.min(truth.k);
        let mean = answers
            .iter()
            .zip(&truth.rows)
            .map(|(a, t)| recall(a, &t[..kk]))
            .sum::<f64>()
            / queries.n().max(1) as f64;
        eprintln!("recall@{kk}: {mean:.3}");
    }
    Ok(())
}

pub fn bench(args: BenchArgs) -> Result<(), CliError> {
    let k = positive(args.k.unwrap_or(DEFAULT_K), "k")?;
    let format = output_format(args.format.as_deref(), Format::Csv)?;
    let grid: BenchGrid = args
        .grid
        .as_deref()
        .unwrap_or("")
        .parse()
        .map_err(|e: treetune::Error| CliError::Usage(e.to_string()))?;
    let target = args.target.as_deref().map(target).transpose()?;
    if target.is_some() && args.validation.is_none() {
        return usage("--target needs --validation queries");
    }
    let data = load(&required(args.data, "data")?, args.vector_format.as_deref())?;
    let queries = load(&required(args.queries, "queries")?, args.vector_format.as_deref())?;
    grid.validate(data.n()).map_err(|e| CliError::Usage(e.to_string()))?;
    let truth = match &args.truth {
        Some(path) => GroundTruth::load_csv(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?,
        None => GroundTruth::compute(&data, &queries, k)?,
    };
    if truth.len() != queries.n() {
        return Err(CliError::Runtime(format!(
            "{} ground-truth rows for {} queries",
            truth.len(),
            queries.n()
        )));
    }
    let opts = BenchOptions {
        k,
        passes: args.passes.unwrap_or(DEFAULT_PASSES),
        seed: args.seed.unwrap_or(DEFAULT_SEED),
        ..BenchOptions::default()
    };
    let mut report = run_bench(&data, &queries, &truth, &grid, &opts)?;

    if let (Some(target), Some(path)) = (target, &args.validation) {
        let validation = load(path, args.vector_format.as_deref())?;
        let limits = limits(data.n(), k, args.tmax, args.lmin, args.lmax, None)?;
        for &kind in &grid.kinds {
            let rule = SplitRule::new(kind);
            let model = time_model(args.model.as_deref(), &data, &limits, &rule)?;
            let (row, sel) =
                bench_autotuned(&data, &validation, &queries, &truth, &limits, &rule, &model, target, &opts)?;
            if !sel.target_met {
                log::warn!("{kind}: target not met; the autotuned row uses the fallback configuration");
            }
            report.rows.push(row);
        }
        report.sort();
    }

    match format {
        Format::Json => write_json(&report, args.out.as_deref()),
        _ => {
            let mut w = sink(args.out.as_deref())?;
            report.write_csv(&mut w)?;
            w.flush()?;
            Ok(())
        }
    }
}

/// Rows of `(field, value)` describing `forest`.
fn describe(forest: &Forest) -> Vec<(&'static str, serde_json::Value)> {
    let leaf = forest.n().div_ceil(1 << forest.depth());
    vec![
        ("magic", json!(String::from_utf8_lossy(&FOREST_MAGIC))),
        ("version", json!(FOREST_VERSION)),
        ("tree_type", json!(forest.rule().kind.name())),
        ("trees", json!(forest.len())),
        ("depth", json!(forest.depth())),
        ("n", json!(forest.n())),
        ("d", json!(forest.d())),
        ("max_leaf_size", json!(leaf)),
        ("seed", json!(forest.seed())),
        ("corpus_checksum", json!(format!("{:016x}", forest.data_checksum()))),
    ]
}

pub fn inspect(args: InspectArgs) -> Result<(), CliError> {
    let format = output_format(args.format.as_deref(), Format::Text)?;
    let path = required(args.index, "index")?;
    let forest = Forest::load(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut rows = describe(&forest);
    if let Some(data) = &args.data {
        let data = load(data, args.vector_format.as_deref())?;
        rows.push(("corpus_matches", json!(forest.check_corpus(&data).is_ok())));
    }
    let render = |v: &serde_json::Value| match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    match format {
        Format::Json => {
            let map: serde_json::Map<String, serde_json::Value> =
                rows.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
            write_json(&map, None)?;
        }
        Format::Csv => {
            println!("field,value");
            for (k, v) in &rows {
                println!("{k},{}", render(v));
            }
        }
        Format::Text => {
            for (k, v) in &rows {
                println!("{k:>16}: {}", render(v));
            }
        }
    }
    Ok(())
}
