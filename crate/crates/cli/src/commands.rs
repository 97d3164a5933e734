use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pnr_core::discrimination::{
    build_histogram, classify_events, detect_peak_or_sample, fit_gaussian_mixture,
    freedman_diaconis_bins, last_threshold_crossing_in, normalized_spacing, timing_jitter,
    AmplitudeHistogram, DetectionEvent, Edge, MixtureFit, MIN_SAMPLES_GAUSSIAN_FIT,
};
use pnr_core::experiments::{
    filter_performance, run_report, simulate_records, sweep_lowpass, ExperimentConfig,
    ExperimentReport, FilterPerformance, FilterSpec, FilterStage, SweepPoint,
};
use pnr_core::filtering::LowpassKind;
use pnr_core::io::{parse_trace, write_events_csv, write_trace};
use pnr_core::signal_model::Trace;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{FileConfig, FilterKind};
use crate::error::CliError;
use crate::manifest::{InputDigest, RunManifest};

/// Resolved inputs shared by every subcommand.
pub struct Context {
    pub file: FileConfig,
    pub inputs: Vec<InputDigest>,
    pub out: PathBuf,
}

impl Context {
    fn manifest(&self, command: &str) -> Result<RunManifest, CliError> {
        RunManifest::new(command, &self.file, self.inputs.clone())
    }

    fn prepare_out(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.out).map_err(CliError::write(&self.out))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.out.join(name);
        let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
        text.push('\n');
        fs::write(&path, text).map_err(CliError::write(&path))?;
        Ok(path)
    }

    fn write_with<F>(&self, name: &str, f: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut fs::File) -> std::io::Result<()>,
    {
        let path = self.out.join(name);
        fs::File::create(&path)
            .and_then(|mut file| f(&mut file))
            .map_err(CliError::write(&path))?;
        Ok(path)
    }
}

pub fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|source| {
        CliError::Core(pnr_core::Error::Io {
            path: path.to_path_buf(),
            source,
        })
    })
}

pub fn simulate(ctx: &Context, traces: Option<usize>) -> Result<(), CliError> {
    let config = ctx.file.resolve()?;
    let count = traces.unwrap_or(ctx.file.simulate.traces);
    if count == 0 {
        return Err(CliError::Usage("--traces must be at least 1".into()));
    }
    let records = simulate_records(&config, count)?;
    ctx.prepare_out()?;
    let dir = ctx.out.join("traces");
    fs::create_dir_all(&dir).map_err(CliError::write(&dir))?;
    let mut truth = csv::Writer::from_writer(Vec::new());
    truth
        .write_record(["file", "arrival_s", "photon_number"])
        .expect("in-memory write");
    for (i, r) in records.iter().enumerate() {
        let name = format!("trace_{i:06}.pnrt");
        write_trace(&dir.join(&name), &r.trace)?;
        truth
            .write_record([name, r.arrival.to_string(), r.photon_number.to_string()])
            .expect("in-memory write");
    }
    let truth = truth.into_inner().expect("in-memory write");
    ctx.write_with("truth.csv", |f| f.write_all(&truth))?;
    ctx.write_json("manifest.json", &ctx.manifest("simulate")?)?;
    println!("wrote {count} traces to {}", dir.display());
    Ok(())
}

/// Trace files named on the command line, directories expanded to their
/// `.pnrt` and `.csv` files in name order.
fn collect_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|source| {
                    CliError::Core(pnr_core::Error::Io {
                        path: p.clone(),
                        source,
                    })
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.is_file()
                        && f.extension().is_some_and(|x| {
                            x.eq_ignore_ascii_case("pnrt") || x.eq_ignore_ascii_case("csv")
                        })
                })
                .collect();
            if found.is_empty() {
                return Err(CliError::NoInput(p.clone()));
            }
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(CliError::Usage("no input paths given".into()));
    }
    Ok(files)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn read_ref_times(path: &Path, bytes: &[u8]) -> Result<HashMap<String, f64>, CliError> {
    let bad = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing `{name}` column")))
    };
    let (file_col, time_col) = (col("file")?, col("arrival_s")?);
    let mut out = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let t: f64 = rec
            .get(time_col)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(format!("line {line}: bad arrival_s")))?;
        let name = rec.get(file_col).unwrap_or_default();
        out.insert(file_name(Path::new(name)), t);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct JitterEntry {
    /// Absent for the row pooling all photon numbers.
    n: Option<u32>,
    count: usize,
    /// Seconds; absent when too few delays were measured.
    jitter_s: Option<f64>,
    mean_delay_s: Option<f64>,
}

#[derive(Debug, Serialize)]
struct FitSummary<'a> {
    manifest: &'a RunManifest,
    fit: &'a MixtureFit,
    spacings: &'a [f64],
    snr_per_n: &'a [f64],
}

#[derive(Debug, Serialize)]
struct AnalysisReport<'a> {
    manifest: &'a RunManifest,
    filter: String,
    traces: usize,
    unrefined_peaks: usize,
    histogram_bins: usize,
    fit: Option<&'a MixtureFit>,
    spacings: Vec<f64>,
    snr_per_n: Vec<f64>,
    /// Index `k = 1..=N`; index 0 is always zero for triggered records.
    fired_counts: Vec<u64>,
    jitter: Vec<JitterEntry>,
    warnings: Vec<String>,
}

struct Analyzed {
    event: DetectionEvent,
    refined: bool,
    /// Half-height crossing on unfiltered or low-pass outputs.
    crossing: Option<f64>,
}

fn write_histogram_csv(out: &mut impl Write, hist: &AmplitudeHistogram) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_low_mV", "bin_high_mV", "count"])?;
    let edges = hist.bin_edges();
    for (i, c) in hist.counts().iter().enumerate() {
        w.write_record([edges[i].to_string(), edges[i + 1].to_string(), c.to_string()])?;
    }
    w.flush()
}

pub fn analyze(
    ctx: &Context,
    paths: &[PathBuf],
    ref_times: Option<&(PathBuf, Vec<u8>)>,
) -> Result<(), CliError> {
    let mut config = ctx.file.resolve()?;
    let files = collect_inputs(paths)?;
    let loaded = files
        .par_iter()
        .map(|f| {
            let bytes = read_input(f)?;
            let trace = parse_trace(&bytes, f)?;
            Ok((InputDigest::of(f, &bytes), trace))
        })
        .collect::<Result<Vec<(InputDigest, Trace)>, CliError>>()?;
    let fs_hz = loaded[0].1.sample_rate();
    if let Some((d, t)) = loaded.iter().find(|(_, t)| t.sample_rate() != fs_hz) {
        return Err(CliError::Data(format!(
            "{}: sample rate {} Hz differs from {} Hz of {}",
            d.path,
            t.sample_rate(),
            fs_hz,
            loaded[0].0.path
        )));
    }
    // filters are built for the recorded grid, not the configured one
    config.sample_rate = fs_hz;
    config.duration = loaded[0].1.len() as f64 / fs_hz;
    let stage = FilterStage::for_config(&config)?;

    let analyzed = loaded
        .par_iter()
        .map(|(_, trace)| {
            let y = stage.apply(trace)?;
            let (event, refined) = detect_peak_or_sample(&y, 0..y.len())?;
            let crossing = if stage.is_fir() {
                None
            } else {
                let end = (y.index_near(event.peak_time) + 1).min(y.len());
                last_threshold_crossing_in(&y, 0..end, 0.5 * event.peak_amplitude, Edge::Rising)
                    .ok()
            };
            Ok(Analyzed {
                event,
                refined,
                crossing,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut inputs = ctx.inputs.clone();
    inputs.extend(loaded.iter().map(|(d, _)| d.clone()));
    if let Some((path, bytes)) = ref_times {
        inputs.push(InputDigest::of(path, bytes));
    }
    let manifest = RunManifest::new("analyze", &ctx.file, inputs)?;

    let mut warnings = Vec::new();
    let events: Vec<DetectionEvent> = analyzed.iter().map(|a| a.event).collect();
    let amplitudes: Vec<f64> = events.iter().map(|e| e.peak_amplitude).collect();
    let bins = if config.histogram_bins == 0 {
        freedman_diaconis_bins(&amplitudes)
    } else {
        config.histogram_bins
    };
    let histogram = build_histogram(&amplitudes, bins)?;
    let num_pixels = config.readout.num_pixels;
    let mut failure = None;
    let fit = match fit_gaussian_mixture(&histogram, num_pixels as usize, None) {
        Ok(fit) => Some(fit),
        Err(e) => {
            warnings.push(format!("mixture fit failed, report is partial: {e}"));
            failure = Some(e);
            None
        }
    };
    let (events, spacings, snr_per_n) = match &fit {
        Some(fit) => (
            classify_events(&events, fit, config.classify),
            normalized_spacing(fit)?,
            fit.components().iter().map(|c| c.mean / c.std).collect(),
        ),
        None => (events, Vec::new(), Vec::new()),
    };
    let mut fired_counts = vec![0u64; num_pixels as usize + 1];
    for e in &events {
        if let Some(n) = e.assigned_n {
            fired_counts[n as usize] += 1;
        }
    }

    let mut jitter = Vec::new();
    if let Some((path, bytes)) = ref_times {
        let refs = read_ref_times(path, bytes)?;
        let mut pooled = Vec::new();
        let mut by_n: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
        let (mut unmatched, mut no_crossing) = (0, 0);
        for ((digest, _), (a, e)) in loaded.iter().zip(analyzed.iter().zip(&events)) {
            let Some(truth) = refs.get(&file_name(Path::new(&digest.path))) else {
                unmatched += 1;
                continue;
            };
            let measured = if stage.is_fir() {
                Some(e.peak_time)
            } else {
                a.crossing
            };
            let Some(measured) = measured else {
                no_crossing += 1;
                continue;
            };
            let delay = measured - truth;
            pooled.push(delay);
            if let Some(n) = e.assigned_n {
                by_n.entry(n).or_default().push(delay);
            }
        }
        if unmatched > 0 {
            warnings.push(format!("{unmatched} traces have no reference time"));
        }
        if no_crossing > 0 {
            warnings.push(format!("{no_crossing} traces have no half-height crossing"));
        }
        let entry = |n: Option<u32>, delays: &[f64]| {
            let enough = delays.len() >= MIN_SAMPLES_GAUSSIAN_FIT;
            JitterEntry {
                n,
                count: delays.len(),
                jitter_s: if enough {
                    timing_jitter(delays, config.jitter_method).ok()
                } else {
                    None
                },
                mean_delay_s: (!delays.is_empty())
                    .then(|| delays.iter().sum::<f64>() / delays.len() as f64),
            }
        };
        jitter.push(entry(None, &pooled));
        jitter.extend(by_n.iter().map(|(n, d)| entry(Some(*n), d)));
    }

    ctx.prepare_out()?;
    ctx.write_with("events.csv", |f| write_events_csv(f, &events))?;
    ctx.write_with("histogram.csv", |f| write_histogram_csv(f, &histogram))?;
    if let Some(fit) = &fit {
        ctx.write_json(
            "fit.json",
            &FitSummary {
                manifest: &manifest,
                fit,
                spacings: &spacings,
                snr_per_n: &snr_per_n,
            },
        )?;
    }
    let report = AnalysisReport {
        manifest: &manifest,
        filter: config.filter.label(),
        traces: loaded.len(),
        unrefined_peaks: analyzed.iter().filter(|a| !a.refined).count(),
        histogram_bins: histogram.bin_count(),
        fit: fit.as_ref(),
        spacings,
        snr_per_n,
        fired_counts,
        jitter,
        warnings,
    };
    ctx.write_json("report.json", &report)?;
    ctx.write_json("manifest.json", &manifest)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("analyzed {} traces", report.traces);
    match failure {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

#[derive(Debug, Serialize)]
struct SweepSummary<'a> {
    manifest: &'a RunManifest,
    lowpass: LowpassKind,
    points: &'a [SweepPoint],
    best_cutoff_hz: f64,
    best: SweepPoint,
    unimodal: bool,
    /// Matched-filter values on the same seeds.
    matched: FilterPerformance,
}

fn matched_spec(file: &FileConfig, config: &ExperimentConfig) -> FilterSpec {
    match (file.filter.kind, &config.filter) {
        (FilterKind::Matched, spec) => spec.clone(),
        _ => FilterSpec::matched(&config.shape),
    }
}

pub fn sweep(ctx: &Context, cutoffs: Option<Vec<f64>>) -> Result<(), CliError> {
    let cutoffs = cutoffs.unwrap_or_else(|| ctx.file.sweep_cutoffs());
    if cutoffs.len() < 3 {
        return Err(CliError::Usage(format!(
            "a sweep needs at least 3 cutoffs, got {}",
            cutoffs.len()
        )));
    }
    let config = ctx.file.resolve()?;
    let result = sweep_lowpass(&config, &cutoffs)?;
    let matched = filter_performance(&config.with_filter(matched_spec(&ctx.file, &config)))?;
    let manifest = ctx.manifest("sweep")?;
    ctx.prepare_out()?;
    ctx.write_with("sweep.csv", |f| result.write_csv(f))?;
    let best = *result.best();
    ctx.write_json(
        "sweep.json",
        &SweepSummary {
            manifest: &manifest,
            lowpass: result.lowpass,
            points: &result.points,
            best_cutoff_hz: result.best_cutoff,
            best,
            unimodal: result.is_unimodal(),
            matched,
        },
    )?;
    ctx.write_json("manifest.json", &manifest)?;
    println!(
        "best cutoff {:.4e} Hz: S12 {:.3}, jitter {:.1} ps; matched filter: S12 {:.3}, jitter {:.1} ps",
        best.cutoff,
        best.s12,
        best.jitter * 1e12,
        matched.s12,
        matched.jitter * 1e12
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct ReportFile<'a> {
    manifest: &'a RunManifest,
    #[serde(flatten)]
    report: &'a ExperimentReport,
}

pub fn report(ctx: &Context) -> Result<(), CliError> {
    let config = ctx.file.resolve()?;
    let report = run_report(&config)?;
    let manifest = ctx.manifest("report")?;
    ctx.prepare_out()?;
    ctx.write_json(
        "report.json",
        &ReportFile {
            manifest: &manifest,
            report: &report,
        },
    )?;
    ctx.write_json("manifest.json", &manifest)?;
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|s| format!("{s:.2}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    println!("spacings unfiltered: {}", fmt(&report.unfiltered.spacings));
    println!("spacings {}: {}", report.filter, fmt(&report.filtered.spacings));
    if let Some(size) = report.max_array_size {
        println!("max array size: {size}");
    }
    Ok(())
}
