//! Subcommand bodies. Each returns the process outcome; errors map to exit code 2.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use scawb_core::cpa_engine::correlate_position;
use scawb_core::leakage_sim::{random_plaintexts, synthesize};
use scawb_core::metrics::{analyze_channel, build_report, ReportOptions};
use scawb_core::trace_store::{
    export_cr_csv, export_iqr_csv, export_max_corr_csv, export_mtd_csv, export_report_csv, export_surface_csv,
    read_trace_file, write_trace_file,
};
use scawb_core::{AesKey, Channel, ChannelReport, ComparisonReport, TraceSet, BLOCK_BYTES};

use crate::args::{AnalysisArgs, AttackArgs, CompareArgs, GenerateArgs, NoiseDemoArgs};
use crate::config::{format_key, manifest_path, parse_key, recorded_seed, GenerateSettings, Settings};

/// Files written by `compare`, relative to the output directory.
pub const COMPARE_FILES: [&str; 5] = [
    "report.csv",
    "max_corr.csv",
    "correlation_ratio.csv",
    "mtd_trajectory.csv",
    "iqr.csv",
];

/// Files written by `noise-demo`, relative to the output directory.
pub const NOISE_DEMO_FILES: [(&str, Channel, bool); 4] = [
    ("power_clean.sctr", Channel::Power, false),
    ("power_lfsr.sctr", Channel::Power, true),
    ("impedance_clean.sctr", Channel::Impedance, false),
    ("impedance_lfsr.sctr", Channel::Impedance, true),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some subkeys were not recovered.
    Partial,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::Partial => 1,
        }
    }
}

fn options(a: &AnalysisArgs) -> Result<ReportOptions> {
    if a.stride == 0 {
        bail!("--stride must be at least 1");
    }
    if a.top_n < 4 || a.top_n > 256 {
        bail!("--top-n must be between 4 and 256, got {}", a.top_n);
    }
    Ok(ReportOptions {
        stride: a.stride,
        top_n: a.top_n,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Simulates the configured trace set and writes it with its manifest.
pub fn generate_file(settings: &GenerateSettings, out: &Path) -> Result<TraceSet> {
    let plaintexts = random_plaintexts(settings.traces, settings.seed);
    let mut set = synthesize(&settings.config, &plaintexts, &settings.key)?;
    if !settings.store_key {
        set = set.with_true_key(None);
    }
    write_trace_file(&set, out)?;
    write_text(&manifest_path(out), &settings.manifest(out))?;
    Ok(set)
}

pub fn generate(args: &GenerateArgs) -> Result<Outcome> {
    let mut settings = match &args.config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    settings.set_opt("channel", args.channel.map(|c| Channel::from(c).name()));
    settings.set_opt("key", args.key.as_deref());
    settings.set_opt("traces", args.traces);
    settings.set_opt("seed", args.seed);
    settings.set_opt("sigma", args.sigma);
    settings.set_opt("reps", args.reps);
    settings.set_opt("lfsr", args.lfsr);
    settings.set_opt("samples", args.samples);
    if args.no_true_key {
        settings.set("store_key", false);
    }
    settings.set_opt("out", args.out.as_ref().map(|p| p.display().to_string()));

    let resolved = settings.resolve()?;
    let out = resolved
        .out
        .clone()
        .context("no output path given (--out or out= in the config)")?;
    let set = generate_file(&resolved, &out)?;
    println!(
        "wrote {}: {} {} traces x {} samples, seed {}",
        out.display(),
        set.trace_count(),
        set.channel(),
        set.sample_count(),
        resolved.seed
    );
    Ok(Outcome::Success)
}

fn seed_line(name: &str, input: &Path) -> String {
    match recorded_seed(input) {
        Some(seed) => format!("{name}_seed={seed}\n"),
        None => format!("# {name}_seed unknown (no sidecar manifest)\n"),
    }
}

pub fn attack(args: &AttackArgs) -> Result<Outcome> {
    let opts = options(&args.analysis)?;
    let set = read_trace_file(&args.file)?;
    create_dir(&args.out)?;
    let report = analyze_channel(&set, None, opts)?;
    export_report_csv(&[&report], args.out.join("report.csv"))?;
    if !args.no_surfaces {
        for pos in 0..BLOCK_BYTES {
            let surface = correlate_position(&set, pos)?;
            export_surface_csv(&surface, args.out.join(format!("surface_{pos:02}.csv")))?;
        }
    }
    write_text(
        &args.out.join("manifest.txt"),
        &format!(
            "# scawb attack manifest\nsubcommand=attack\ninput={}\n{}stride={}\ntop_n={}\nsurfaces={}\n",
            args.file.display(),
            seed_line("input", &args.file),
            opts.stride,
            opts.top_n,
            !args.no_surfaces
        ),
    )?;

    println!("{} channel, {} traces", set.channel(), set.trace_count());
    println!("recovered key: {}", format_key(&report.recovered_key()));
    if set.true_key().is_none() {
        println!("no reference key stored; success not scored");
        return Ok(Outcome::Success);
    }
    let recovered = report.success_count();
    println!("{recovered}/{BLOCK_BYTES} subkeys recovered");
    Ok(if recovered == BLOCK_BYTES {
        Outcome::Success
    } else {
        Outcome::Partial
    })
}

fn shared_key(power: &TraceSet, impedance: &TraceSet) -> Result<Option<AesKey>> {
    match (power.true_key(), impedance.true_key()) {
        (Some(p), Some(z)) if p != z => bail!("files store different keys ({} vs {})", format_key(p), format_key(z)),
        (p, z) => Ok(p.or(z).copied()),
    }
}

fn opt(v: Option<f64>, width: usize) -> String {
    match v {
        Some(x) if x.is_infinite() => format!("{:>width$}", "inf"),
        Some(x) => format!("{x:>width$.4}"),
        None => format!("{:>width$}", "-"),
    }
}

fn mtd_cell(r: Option<usize>) -> String {
    r.map_or_else(|| format!("{:>6}", "-"), |m| format!("{m:>6}"))
}

/// Per-position grid with both channels, then the IQR row and summary counts.
pub fn render_comparison(report: &ComparisonReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "pos  true | power: rec  max_rho       cr    mtd | impedance: rec  max_rho       cr    mtd"
    );
    for (p, z) in report.power.subkeys.iter().zip(&report.impedance.subkeys) {
        let tb = p.true_byte.map_or_else(|| "--".into(), |b| format!("{b:02X}"));
        let _ = writeln!(
            out,
            "{:>3}    {tb} |         {:02X} {:>8.4} {} {} |             {:02X} {:>8.4} {} {}",
            p.position,
            p.recovered,
            p.max_rho,
            opt(p.cr, 8),
            mtd_cell(p.mtd),
            z.recovered,
            z.max_rho,
            opt(z.cr, 8),
            mtd_cell(z.mtd),
        );
    }
    let labels = |r: &ChannelReport| {
        r.subkeys
            .iter()
            .map(|s| format!("{:>2}", s.outlier_label()))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let _ = writeln!(out, "\nIQR outliers per position (F = no candidate)");
    let _ = writeln!(out, "power     {}", labels(&report.power));
    let _ = writeln!(out, "impedance {}", labels(&report.impedance));
    for r in [&report.power, &report.impedance] {
        let _ = write!(out, "\n{}: ", r.channel);
        if r.subkeys.iter().any(|s| s.success.is_some()) {
            let _ = write!(out, "{}/{BLOCK_BYTES} subkeys recovered, ", r.success_count());
        }
        let _ = write!(
            out,
            "{} single-candidate, {} F",
            r.single_candidate_count(),
            r.failure_count()
        );
    }
    out.push('\n');
    out
}

pub fn compare(args: &CompareArgs) -> Result<Outcome> {
    let opts = options(&args.analysis)?;
    let power = read_trace_file(&args.power)?;
    let impedance = read_trace_file(&args.impedance)?;
    if power.channel() != Channel::Power || impedance.channel() != Channel::Impedance {
        bail!(
            "expected a power file then an impedance file, got {} and {}",
            power.channel(),
            impedance.channel()
        );
    }
    if power.plaintexts() != impedance.plaintexts() {
        bail!("the two files do not share the same plaintext sequence");
    }
    let key = shared_key(&power, &impedance)?;
    let report = build_report(&power, &impedance, key.as_ref(), opts)?;

    create_dir(&args.out)?;
    let path = |name: &str| args.out.join(name);
    export_report_csv(&[&report.power, &report.impedance], path(COMPARE_FILES[0]))?;
    export_max_corr_csv(&report, path(COMPARE_FILES[1]))?;
    export_cr_csv(&report, path(COMPARE_FILES[2]))?;
    export_mtd_csv(&report, path(COMPARE_FILES[3]))?;
    export_iqr_csv(&report, path(COMPARE_FILES[4]))?;
    write_text(
        &path("manifest.txt"),
        &format!(
            "# scawb compare manifest\nsubcommand=compare\npower={}\n{}impedance={}\n{}stride={}\ntop_n={}\n",
            args.power.display(),
            seed_line("power", &args.power),
            args.impedance.display(),
            seed_line("impedance", &args.impedance),
            opts.stride,
            opts.top_n
        ),
    )?;
    print!("{}", render_comparison(&report));
    Ok(Outcome::Success)
}

/// Output paths of the four demo files, in [`NOISE_DEMO_FILES`] order.
pub fn noise_demo_paths(dir: &Path) -> Vec<PathBuf> {
    NOISE_DEMO_FILES.iter().map(|(name, _, _)| dir.join(name)).collect()
}

pub fn noise_demo(args: &NoiseDemoArgs) -> Result<Outcome> {
    parse_key(&args.key)?;
    create_dir(&args.out)?;
    for ((name, channel, lfsr), path) in NOISE_DEMO_FILES.iter().zip(noise_demo_paths(&args.out)) {
        let mut settings = Settings::default();
        settings.set("channel", channel.name());
        settings.set("key", &args.key);
        settings.set_opt("traces", args.traces);
        settings.set_opt("seed", args.seed);
        settings.set_opt("samples", args.samples);
        settings.set("lfsr", if *lfsr { "on" } else { "off" });
        let resolved = settings.resolve()?;
        generate_file(&resolved, &path)?;
        println!("wrote {name}");
    }
    Ok(Outcome::Success)
}
