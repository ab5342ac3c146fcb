use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use vitalbench_core::audit::{AuditReport, CohortAudit};
use vitalbench_core::config::CohortConfig;
use vitalbench_core::engine::export::{load_bundle, load_manifest};
use vitalbench_core::engine::{cohort_digest, export, Engine};
use vitalbench_core::model::{Query, UserBundle};
use vitalbench_core::queries::{generate_queries, generate_queries_with_engine, write_query_files};
use vitalbench_core::scoring::{
    dimension_name, render_text_table, score_queries, tier_name, DeterministicJudge, HttpJudge,
    RubricJudge,
};

#[derive(Parser)]
#[command(
    name = "vitalbench",
    version,
    about = "Synthesizes longitudinal health cohorts and compiles, audits, scores and plots them"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a cohort of user bundles
    Generate(GenerateArgs),
    /// Compile evaluation queries for one user bundle
    Queries(QueriesArgs),
    /// Score agent responses against compiled queries
    Score(ScoreArgs),
    /// Aggregate audit metrics across a cohort
    Audit(AuditArgs),
    /// Render one indicator's trajectory as an SVG
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Cohort config JSON (falls back to $VITALBENCH_CONFIG)
    #[arg(long, env = "VITALBENCH_CONFIG")]
    config: PathBuf,
    /// Number of users, overriding the config's cohort_size
    #[arg(long)]
    users: Option<u32>,
    /// Root seed, overriding the config's root_seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the cohort
    #[arg(long)]
    out: PathBuf,
    /// Generate users one at a time (outputs are identical either way)
    #[arg(long)]
    serial: bool,
}

#[derive(Args)]
struct QueriesArgs {
    /// Bundle directory of one user
    #[arg(long)]
    bundle: PathBuf,
    /// Queries per evaluation dimension
    #[arg(long, default_value_t = 20)]
    per_dimension: usize,
    /// Easy/medium/hard proportions, e.g. 20/30/50
    #[arg(long, default_value = "20/30/50")]
    split: String,
    /// Query sampling seed (defaults to the bundle's root seed)
    #[arg(long)]
    seed: Option<u64>,
    /// Cohort config; when given, hard explanation slots can use whole-series
    /// resimulation (falls back to $VITALBENCH_CONFIG)
    #[arg(long, env = "VITALBENCH_CONFIG")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Compiled queries JSON (with ground truth)
    #[arg(long)]
    queries: PathBuf,
    /// Agent responses: a JSON object mapping query_id to a canonical answer
    #[arg(long)]
    responses: PathBuf,
    /// Where to write the report JSON
    #[arg(long)]
    out: PathBuf,
    /// External rubric judge endpoint; omitted means the deterministic judge
    #[arg(long)]
    judge: Option<String>,
}

#[derive(Args)]
struct AuditArgs {
    /// Cohort directory written by generate
    #[arg(long)]
    cohort: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// Bundle directory of one user
    #[arg(long)]
    bundle: PathBuf,
    /// Indicator key to plot
    #[arg(long)]
    indicator: String,
    /// First day of the plotted range
    #[arg(long, default_value_t = 0)]
    from: i64,
    /// Last day of the plotted range (defaults to the horizon end)
    #[arg(long)]
    to: Option<i64>,
    /// Output SVG path
    #[arg(long)]
    out: PathBuf,
}

/// Command failures sorted by exit code: 2 for usage and configuration
/// problems, 1 for runtime failures.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn runtime(msg: impl Into<String>) -> Failure {
    Failure::Runtime(msg.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Generate(args) => cmd_generate(args),
        Cmd::Queries(args) => cmd_queries(args),
        Cmd::Score(args) => cmd_score(args),
        Cmd::Audit(args) => cmd_audit(args),
        Cmd::Plot(args) => cmd_plot(args),
    }
}

fn read_config(path: &Path) -> Result<CohortConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let cfg: CohortConfig = serde_json::from_str(&text)
        .map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?;
    cfg.validate()
        .map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?;
    Ok(cfg)
}

fn cmd_generate(args: GenerateArgs) -> Result<(), Failure> {
    let mut cfg = read_config(&args.config)?;
    if let Some(users) = args.users {
        cfg.cohort_size = users;
    }
    if let Some(seed) = args.seed {
        cfg.root_seed = seed;
    }
    if args.serial {
        cfg.parallel = false;
    }
    if cfg.cohort_size == 0 {
        return Err(usage("--users must be at least 1"));
    }
    cfg.validate()
        .map_err(|e| usage(format!("invalid config after overrides: {e}")))?;

    let engine = Engine::new(cfg.clone()).map_err(|e| usage(format!("config rejected: {e}")))?;
    let bundles = engine
        .generate_cohort()
        .map_err(|e| runtime(format!("generation failed: {e}")))?;
    export::export_cohort(&args.out, &cfg, &bundles)
        .map_err(|e| runtime(format!("export failed: {e}")))?;
    println!(
        "wrote {} user bundles to {}",
        bundles.len(),
        args.out.display()
    );
    println!("cohort digest {}", cohort_digest(&bundles));
    Ok(())
}

fn parse_split(raw: &str) -> Result<[f64; 3], Failure> {
    let parts: Vec<&str> = raw.split('/').collect();
    if parts.len() != 3 {
        return Err(usage(format!(
            "split must be three /-separated numbers, got {raw:?}"
        )));
    }
    let mut weights = [0.0f64; 3];
    for (slot, part) in weights.iter_mut().zip(&parts) {
        let w: f64 = part
            .trim()
            .parse()
            .map_err(|_| usage(format!("bad split component {part:?}")))?;
        if !w.is_finite() || w < 0.0 {
            return Err(usage(format!("split component {part:?} must be >= 0")));
        }
        *slot = w;
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(usage("split must have a positive total"));
    }
    Ok(weights.map(|w| w / total))
}

fn load_bundle_dir(dir: &Path) -> Result<UserBundle, Failure> {
    if !dir.is_dir() {
        return Err(usage(format!("bundle directory {} not found", dir.display())));
    }
    load_bundle(dir).map_err(|e| runtime(format!("cannot load bundle: {e}")))
}

fn cmd_queries(args: QueriesArgs) -> Result<(), Failure> {
    let bundle = load_bundle_dir(&args.bundle)?;
    let split = parse_split(&args.split)?;
    let seed = args.seed.unwrap_or(bundle.seeds.root_seed);

    let set = match &args.config {
        Some(path) => {
            let cfg = read_config(path)?;
            if cfg.epoch != bundle.seeds.epoch {
                return Err(usage(format!(
                    "config epoch {} does not match bundle epoch {}",
                    cfg.epoch, bundle.seeds.epoch
                )));
            }
            let engine =
                Engine::new(cfg).map_err(|e| usage(format!("config rejected: {e}")))?;
            generate_queries_with_engine(&bundle, &engine, args.per_dimension, split, seed)
        }
        None => generate_queries(&bundle, args.per_dimension, split, seed),
    }
    .map_err(|e| runtime(format!("query compilation failed: {e}")))?;

    let (queries_path, agent_path) = write_query_files(&args.bundle, &set)
        .map_err(|e| runtime(format!("cannot write query files: {e}")))?;
    for sub in &set.substitutions {
        println!(
            "substituted {}/{}: {} -> {} ({})",
            dimension_name(sub.dimension),
            tier_name(sub.tier),
            sub.wanted,
            sub.used,
            sub.reason
        );
    }
    println!(
        "wrote {} queries to {}",
        set.queries.len(),
        queries_path.display()
    );
    println!("agent variant at {}", agent_path.display());
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<(), Failure> {
    let qtext = fs::read_to_string(&args.queries)
        .map_err(|e| usage(format!("cannot read queries {}: {e}", args.queries.display())))?;
    let queries: Vec<Query> = serde_json::from_str(&qtext)
        .map_err(|e| runtime(format!("queries file schema: {e}")))?;
    let rtext = fs::read_to_string(&args.responses).map_err(|e| {
        usage(format!(
            "cannot read responses {}: {e}",
            args.responses.display()
        ))
    })?;
    let responses: BTreeMap<String, Value> = serde_json::from_str(&rtext)
        .map_err(|e| runtime(format!("responses file schema: {e}")))?;

    let mut judge: Box<dyn RubricJudge> = match &args.judge {
        Some(url) => Box::new(HttpJudge::new(url.clone())),
        None => Box::new(DeterministicJudge),
    };
    let report = score_queries(&queries, &responses, judge.as_mut());

    let mut text = serde_json::to_string_pretty(&report)
        .map_err(|e| runtime(format!("cannot serialize report: {e}")))?;
    text.push('\n');
    fs::write(&args.out, text)
        .map_err(|e| runtime(format!("cannot write {}: {e}", args.out.display())))?;
    print!("{}", render_text_table(&report));
    println!("report written to {}", args.out.display());
    Ok(())
}

fn cmd_audit(args: AuditArgs) -> Result<(), Failure> {
    if !args.cohort.is_dir() {
        return Err(usage(format!(
            "cohort directory {} not found",
            args.cohort.display()
        )));
    }
    let manifest = load_manifest(&args.cohort)
        .map_err(|e| runtime(format!("cannot read manifest: {e}")))?;
    let mut reports = Vec::with_capacity(manifest.users.len());
    for user in &manifest.users {
        let path = export::bundle_dir(&args.cohort, user).join("audit.json");
        let text = fs::read_to_string(&path)
            .map_err(|e| runtime(format!("cannot read {}: {e}", path.display())))?;
        let report: AuditReport = serde_json::from_str(&text)
            .map_err(|e| runtime(format!("bad audit file {}: {e}", path.display())))?;
        reports.push(report);
    }
    let cohort = CohortAudit::merge(reports.iter());
    print!("{}", render_audit_table(&cohort));
    Ok(())
}

fn render_audit_table(audit: &CohortAudit) -> String {
    let mut out = String::new();
    out.push_str(&format!("users: {}\n", audit.users));
    out.push_str(&format!("coverage: {:.1}%\n", 100.0 * audit.coverage));
    out.push_str(&format!(
        "range violations: {:.3}%\n",
        100.0 * audit.range_violation_rate
    ));
    out.push_str(&format!(
        "slope violations: {:.3}%\n",
        100.0 * audit.slope_violation_rate
    ));
    out.push_str(&format!("clip rate: {:.3}%\n", 100.0 * audit.clip_rate));
    let header = format!(
        "{:<22} {:>9} {:>8} {:>8} {:>8}\n",
        "indicator", "coverage", "range%", "slope%", "clip%"
    );
    out.push_str(&header);
    out.push_str(&"-".repeat(header.len() - 1));
    out.push('\n');
    for (key, counts) in &audit.per_indicator {
        out.push_str(&format!(
            "{:<22} {:>8.1}% {:>8.3} {:>8.3} {:>8.3}\n",
            key,
            100.0 * counts.coverage(),
            100.0 * counts.range_violation_rate(),
            100.0 * counts.slope_violation_rate(),
            100.0 * counts.clip_rate(),
        ));
    }
    out
}

fn cmd_plot(args: PlotArgs) -> Result<(), Failure> {
    let bundle = load_bundle_dir(&args.bundle)?;
    let series = bundle.device.get(&args.indicator).ok_or_else(|| {
        let known: Vec<&str> = bundle.device.keys().map(String::as_str).collect();
        runtime(format!(
            "unknown indicator {:?}; bundle has: {}",
            args.indicator,
            known.join(", ")
        ))
    })?;
    let horizon = bundle.horizon();
    let from = args.from.clamp(0, horizon - 1);
    let to = args.to.unwrap_or(horizon - 1).clamp(0, horizon - 1);
    if from > to {
        return Err(usage(format!("--from {from} is after --to {to}")));
    }

    let values: Vec<Option<f64>> = series.values[from as usize..=to as usize]
        .iter()
        .map(|p| p.value)
        .collect();
    let rolling = rolling_mean(&values, 7);
    let baseline = quiet_baseline(series);
    let svg = render_svg(&bundle, &args.indicator, &series.unit, from, to, &values, &rolling, baseline);
    fs::write(&args.out, svg)
        .map_err(|e| runtime(format!("cannot write {}: {e}", args.out.display())))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

/// Trailing 7-day mean over whatever numeric values the window holds. The
/// output has one slot per input day; days whose whole window is absent stay
/// empty.
fn rolling_mean(values: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let lo = i.saturating_sub(window - 1);
        let mut sum = 0.0;
        let mut n = 0usize;
        for v in values[lo..=i].iter().flatten() {
            sum += v;
            n += 1;
        }
        out.push(if n == 0 { None } else { Some(sum / n as f64) });
    }
    out
}

/// The indicator's personalized resting level: mean over days with no event
/// contribution. Falls back to the whole-series mean when every day is
/// event-touched.
fn quiet_baseline(series: &vitalbench_core::model::DeviceSeries) -> Option<f64> {
    let quiet: Vec<f64> = series
        .values
        .iter()
        .filter(|p| p.decomposition.delta_evt == 0.0)
        .filter_map(|p| p.value)
        .collect();
    let pool: Vec<f64> = if quiet.is_empty() {
        series.values.iter().filter_map(|p| p.value).collect()
    } else {
        quiet
    };
    if pool.is_empty() {
        None
    } else {
        Some(pool.iter().sum::<f64>() / pool.len() as f64)
    }
}

const SVG_W: f64 = 900.0;
const SVG_H: f64 = 420.0;
const MARGIN_L: f64 = 62.0;
const MARGIN_R: f64 = 18.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 42.0;

#[allow(clippy::too_many_arguments)]
fn render_svg(
    bundle: &UserBundle,
    indicator: &str,
    unit: &str,
    from: i64,
    to: i64,
    values: &[Option<f64>],
    rolling: &[Option<f64>],
    baseline: Option<f64>,
) -> String {
    let plot_w = SVG_W - MARGIN_L - MARGIN_R;
    let plot_h = SVG_H - MARGIN_T - MARGIN_B;
    let span = (to - from).max(1) as f64;
    let x_of = |day: i64| MARGIN_L + (day - from) as f64 / span * plot_w;

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.iter().chain(rolling.iter()).flatten() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if let Some(b) = baseline {
        lo = lo.min(b);
        hi = hi.max(b);
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let y_of = |v: f64| MARGIN_T + (hi - v) / (hi - lo) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {SVG_W} {SVG_H}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"#ffffff\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{MARGIN_L}\" y=\"20\" font-size=\"14\" fill=\"#111\">{} — {indicator} ({unit})</text>\n",
        bundle.profile.user_id
    ));

    // Event windows clipped to the plotted range.
    for event in &bundle.events {
        let start = event.start_day.max(from);
        let end = event.end_day.min(to);
        if start > to || end < from || start > end {
            continue;
        }
        let x = x_of(start);
        let w = (x_of(end) - x).max(1.0);
        svg.push_str(&format!(
            "<rect x=\"{x:.2}\" y=\"{MARGIN_T}\" width=\"{w:.2}\" height=\"{plot_h:.2}\" fill=\"#f59e0b\" fill-opacity=\"0.14\"><title>{}</title></rect>\n",
            event.name
        ));
    }

    // Frame and ticks.
    svg.push_str(&format!(
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{plot_w:.2}\" height=\"{plot_h:.2}\" fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>\n"
    ));
    for i in 0..=4 {
        let day = from + ((to - from) * i / 4);
        let x = x_of(day);
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"#333\"/>\n",
            MARGIN_T + plot_h,
            MARGIN_T + plot_h + 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\" fill=\"#333\">d{day}</text>\n",
            MARGIN_T + plot_h + 16.0
        ));
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let y = y_of(v);
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{MARGIN_L}\" y2=\"{y:.2}\" stroke=\"#333\"/>\n",
            MARGIN_L - 4.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\" fill=\"#333\">{v:.1}</text>\n",
            MARGIN_L - 7.0,
            y + 3.5
        ));
    }

    // Raw values, split into segments at absent days.
    svg.push_str(&polyline_segments(values, from, &x_of, &y_of, "#2563eb", 1.0));
    // 7-day rolling mean.
    svg.push_str(&polyline_segments(rolling, from, &x_of, &y_of, "#dc2626", 1.8));

    if let Some(b) = baseline {
        let y = y_of(b);
        svg.push_str(&format!(
            "<line x1=\"{MARGIN_L}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#f97316\" stroke-width=\"1.4\" stroke-dasharray=\"2 5\"/>\n",
            MARGIN_L + plot_w
        ));
    }

    // Exam visits as markers along the lower frame edge.
    for exam in &bundle.exams {
        if exam.visit_day < from || exam.visit_day > to {
            continue;
        }
        let x = x_of(exam.visit_day);
        let y = MARGIN_T + plot_h;
        svg.push_str(&format!(
            "<path d=\"M {x:.2} {:.2} L {:.2} {y:.2} L {:.2} {y:.2} Z\" fill=\"#16a34a\"><title>exam {}</title></path>\n",
            y - 8.0,
            x - 4.5,
            x + 4.5,
            exam.date
        ));
    }

    svg.push_str("</svg>\n");
    svg
}

fn polyline_segments(
    values: &[Option<f64>],
    from: i64,
    x_of: &dyn Fn(i64) -> f64,
    y_of: &dyn Fn(f64) -> f64,
    stroke: &str,
    width: f64,
) -> String {
    let mut out = String::new();
    let mut points = String::new();
    let mut count = 0usize;
    let flush = |points: &mut String, count: &mut usize, out: &mut String| {
        if *count >= 2 {
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{width}\"/>\n",
                points.trim_end()
            ));
        }
        points.clear();
        *count = 0;
    };
    for (i, v) in values.iter().enumerate() {
        match v {
            Some(v) => {
                points.push_str(&format!(
                    "{:.2},{:.2} ",
                    x_of(from + i as i64),
                    y_of(*v)
                ));
                count += 1;
            }
            None => flush(&mut points, &mut count, &mut out),
        }
    }
    flush(&mut points, &mut count, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_parses_and_normalizes() {
        assert_eq!(parse_split("20/30/50").unwrap(), [0.2, 0.3, 0.5]);
        assert_eq!(parse_split("1/0/0").unwrap(), [1.0, 0.0, 0.0]);
        let [a, b, c] = parse_split("0.2/0.3/0.5").unwrap();
        assert!((a - 0.2).abs() < 1e-12);
        assert!((b - 0.3).abs() < 1e-12);
        assert!((c - 0.5).abs() < 1e-12);
        assert!(parse_split("20/30").is_err());
        assert!(parse_split("a/b/c").is_err());
        assert!(parse_split("-1/1/0").is_err());
        assert!(parse_split("0/0/0").is_err());
    }

    #[test]
    fn rolling_mean_keeps_length_and_skips_gaps() {
        let values: Vec<Option<f64>> = (0..30)
            .map(|i| if i % 7 == 3 { None } else { Some(i as f64) })
            .collect();
        let rolled = rolling_mean(&values, 7);
        assert_eq!(rolled.len(), values.len());
        // Day 0 window holds only day 0.
        assert_eq!(rolled[0], Some(0.0));
        // Day 8 window = days 2..=8 minus the absent day 3.
        let expect = (2.0 + 4.0 + 5.0 + 6.0 + 7.0 + 8.0) / 6.0;
        assert_eq!(rolled[8], Some(expect));
        let all_absent = vec![None, None, None];
        assert_eq!(rolling_mean(&all_absent, 7), vec![None, None, None]);
    }

    #[test]
    fn polyline_breaks_at_absent_days() {
        let x_of = |d: i64| d as f64;
        let y_of = |v: f64| v;
        let vals = vec![Some(1.0), Some(2.0), None, Some(3.0), Some(4.0)];
        let svg = polyline_segments(&vals, 0, &x_of, &y_of, "#000", 1.0);
        assert_eq!(svg.matches("<polyline").count(), 2);
        // Isolated points don't render as degenerate one-point lines.
        let vals = vec![Some(1.0), None, Some(3.0)];
        let svg = polyline_segments(&vals, 0, &x_of, &y_of, "#000", 1.0);
        assert_eq!(svg.matches("<polyline").count(), 0);
    }
}
