use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use sketchlidar::baselines::{coarse_hist_test, ks_interarrival_test};
use sketchlidar::detection::{DetectionConfig, DetectionResult, Detector, PixelDecision};
use sketchlidar::io::{
    dump_csv, ingest_csv, read_irf_text, sketch_photon_file, write_pgm, PhotonFile, SketchFile, PHOTON_MAGIC,
};
use sketchlidar::pipeline::estimate_pixels;
use sketchlidar::simulator::{run_experiment, ExperimentKind, ExperimentOutput, ExperimentSpec};
use sketchlidar::{
    detection_map, irf_transform, Error, FrequencyGrid, Irf, PixelEstimator, Result, TvOptions, WeightMode,
};

use crate::{Baseline, Command, DetectArgs, EstimateArgs, TestArgs, WeightsArg};

/// Sketch size used for photon-file input when `--m` is absent.
const DEFAULT_M: u16 = 10;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Sketch { input, m, output } => sketch(&input, m, &output),
        Command::Detect(args) => detect(&args),
        Command::Estimate(args) => estimate(&args),
        Command::Simulate { spec, output, seed } => simulate(&spec, output.as_deref(), seed, false),
        Command::Bench { spec, output } => simulate(&spec, output.as_deref(), None, true),
        Command::Ingest {
            input,
            width,
            height,
            bins,
            bin_width_ps,
            skip_invalid,
            output,
        } => ingest(&input, width, height, bins, bin_width_ps, skip_invalid, &output),
        Command::Dump { input, output } => {
            let file = PhotonFile::read(open(&input)?)?;
            dump_csv(&file, sink(output.as_deref())?)
        }
    }
}

fn with_path(path: &Path, e: io::Error) -> Error {
    Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| with_path(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| with_path(path, e))
}

fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn is_photon_file(path: &Path) -> Result<bool> {
    let mut magic = [0u8; 4];
    let mut f = open(path)?;
    match f.read_exact(&mut magic) {
        Ok(()) => Ok(&magic == PHOTON_MAGIC),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Ok(false),
        Err(e) => Err(with_path(path, e)),
    }
}

/// Sketches of the input: photon files are streamed through the sketch
/// accumulator, sketch files are read and optionally truncated.
fn load_sketches(path: &Path, m: Option<u16>) -> Result<SketchFile> {
    if is_photon_file(path)? {
        return sketch_photon_file(open(path)?, usize::from(m.unwrap_or(DEFAULT_M)));
    }
    let file = SketchFile::read(open(path)?)?;
    match m.map(usize::from) {
        Some(m) if m > file.m => Err(Error::Dimension(format!(
            "--m {m} exceeds the {} frequencies stored in {}",
            file.m,
            path.display()
        ))),
        Some(m) if m < file.m => {
            let sketches = file.sketches.iter().map(|s| s.truncated(m)).collect();
            SketchFile::new(file.width, file.height, file.bins, m, sketches)
        }
        _ => Ok(file),
    }
}

fn detector(test: &TestArgs, m: usize) -> Result<Detector> {
    let cfg = DetectionConfig::with_mode(m, test.beta, test.dof_mode.into(), test.scaling.into())?;
    Ok(Detector::new(cfg)?.with_min_photons(test.min_photons))
}

fn sketch(input: &Path, m: u16, output: &Path) -> Result<()> {
    let photon_bytes = std::fs::metadata(input).map_err(|e| with_path(input, e))?.len();
    let file = sketch_photon_file(open(input)?, usize::from(m))?;
    let mut out = create(output)?;
    file.write(&mut out)?;
    out.flush()?;
    let photons: u64 = file.sketches.iter().map(|s| s.n).sum();
    let sketch_bytes = file.byte_len();
    println!(
        "{}x{} pixels, {photons} photons, m={m}: {photon_bytes} -> {sketch_bytes} bytes, compression ratio {:.3}",
        file.width,
        file.height,
        photon_bytes as f64 / sketch_bytes as f64
    );
    Ok(())
}

struct PixelTest {
    photons: u64,
    decision: PixelDecision,
}

fn baseline_tests(args: &DetectArgs, baseline: Baseline) -> Result<(u32, u32, Vec<PixelTest>)> {
    if !is_photon_file(&args.input)? {
        return Err(Error::Data(format!(
            "{}: full-data baselines need a photon file, not a sketch file",
            args.input.display()
        )));
    }
    let file = PhotonFile::read(open(&args.input)?)?;
    let min = args.test.min_photons.max(1);
    let tests = file
        .streams()?
        .iter()
        .map(|s| {
            let photons = s.len() as u64;
            let decision = if photons < min {
                PixelDecision::Insufficient { photons }
            } else {
                let r: DetectionResult = match baseline {
                    Baseline::Hist => coarse_hist_test(s, args.coarse_bins, args.test.beta)?,
                    Baseline::Ks => ks_interarrival_test(s, args.test.beta)?,
                };
                PixelDecision::Tested(r)
            };
            Ok(PixelTest { photons, decision })
        })
        .collect::<Result<_>>()?;
    Ok((file.header.width, file.header.height, tests))
}

fn sketch_tests(args: &DetectArgs) -> Result<(u32, u32, Vec<PixelTest>)> {
    let file = load_sketches(&args.input, args.test.m)?;
    let det = detector(&args.test, file.m)?;
    let tests = file
        .sketches
        .iter()
        .map(|s| PixelTest {
            photons: s.n,
            decision: det.classify(s),
        })
        .collect();
    Ok((file.width, file.height, tests))
}

fn detect(args: &DetectArgs) -> Result<()> {
    let (width, height, tests) = match args.baseline {
        Some(b) => baseline_tests(args, b)?,
        None => sketch_tests(args)?,
    };
    let (width, height) = (width as usize, height as usize);
    // Margins over each pixel's own threshold, so baselines with
    // count-dependent thresholds share the same map code.
    let margins: Vec<f64> = tests
        .iter()
        .map(|t| t.decision.result().map_or(0.0, |r| r.statistic - r.threshold))
        .collect();
    let mask: Vec<bool> = tests.iter().map(|t| t.decision.result().is_some()).collect();
    let opts = TvOptions {
        max_iter: args.tv_iters,
        tol: args.tv_tol,
    };
    let map = detection_map(width, height, &margins, Some(&mask), 0.0, args.tv_tau, &opts)?;

    let mut pgm = create(&args.output)?;
    write_pgm(&map, &mut pgm)?;
    pgm.flush()?;

    let csv_path = args.csv.clone().unwrap_or_else(|| args.output.with_extension("csv"));
    let mut csv = create(&csv_path)?;
    writeln!(csv, "pixel_x,pixel_y,photons,statistic,threshold,detected,map")?;
    for (i, t) in tests.iter().enumerate() {
        let (stat, thr) = t.decision.result().map_or((String::new(), String::new()), |r| {
            (r.statistic.to_string(), r.threshold.to_string())
        });
        writeln!(
            csv,
            "{},{},{},{stat},{thr},{},{}",
            i % width,
            i / width,
            t.photons,
            u8::from(t.decision.detected()),
            map.values[i]
        )?;
    }
    csv.flush()?;
    let tested = mask.iter().filter(|&&m| m).count();
    let raw = tests.iter().filter(|t| t.decision.detected()).count();
    eprintln!(
        "{width}x{height}: {tested} pixels tested, {raw} rejected per pixel, {} in the map",
        map.ones()
    );
    Ok(())
}

fn load_irf(args: &EstimateArgs, bins: u32) -> Result<Irf> {
    let irf = match (&args.irf, args.irf_sigma) {
        (Some(path), _) => read_irf_text(open(path)?)?,
        (None, Some(sigma)) => Irf::gaussian_circular(bins, sigma, 0.0)?,
        (None, None) => {
            return Err(Error::Parameter(
                "estimation needs an impulse response: pass --irf FILE or --irf-sigma WIDTH".into(),
            ))
        }
    };
    if irf.bins() != bins {
        return Err(Error::Dimension(format!(
            "impulse response has {} bins but the input has T={bins}",
            irf.bins()
        )));
    }
    Ok(irf)
}

fn estimate(args: &EstimateArgs) -> Result<()> {
    let file = load_sketches(&args.input, args.test.m)?;
    let irf = load_irf(args, file.bins)?;
    let grid = FrequencyGrid::new(file.m, file.bins)?;
    let mut estimator = PixelEstimator::new(detector(&args.test, file.m)?, grid.clone(), irf_transform(&irf, &grid)?)?;
    estimator.weight_mode = match args.weights {
        WeightsArg::Identity => WeightMode::Identity,
        WeightsArg::Precision => WeightMode::default(),
    };
    if let Some(g) = args.grid_points {
        estimator.grid_points = g;
    }
    let results = estimate_pixels(&file.sketches, &estimator)?;

    let width = file.width as usize;
    let mut out = create(&args.output)?;
    writeln!(out, "pixel_x,pixel_y,detected,t_hat,alpha_hat,statistic")?;
    for (i, r) in results.iter().enumerate() {
        let stat = r.decision.result().map_or(String::new(), |d| d.statistic.to_string());
        let (t, a) = r.estimate.map_or((String::new(), String::new()), |e| {
            (e.t_hat.to_string(), e.alpha_hat.to_string())
        });
        writeln!(
            out,
            "{},{},{},{t},{a},{stat}",
            i % width,
            i / width,
            u8::from(r.decision.detected())
        )?;
    }
    out.flush()?;
    Ok(())
}

fn simulate(spec_path: &Path, output: Option<&Path>, seed: Option<u64>, bench: bool) -> Result<()> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| with_path(spec_path, e))?;
    let mut spec = ExperimentSpec::from_json(&text)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    if bench {
        spec.kind = ExperimentKind::Timing;
    }
    let result = run_experiment(&spec)?;
    let mut out = sink(output)?;
    result.write_csv(&mut out)?;
    out.flush()?;
    if let ExperimentOutput::Timing(report) = &result {
        for r in &report.rows {
            eprintln!(
                "n={}: sketch {:.2} us/pixel, K-S {:.2} us/pixel",
                r.n,
                1e6 * r.sketch_seconds,
                1e6 * r.ks_seconds
            );
        }
        if let Some((s, k)) = report.growth() {
            eprintln!("growth from smallest to largest n: sketch x{s:.2}, K-S x{k:.2}");
        }
    }
    Ok(())
}

fn ingest(
    input: &Path,
    width: u32,
    height: u32,
    bins: u32,
    bin_width_ps: u32,
    skip_invalid: bool,
    output: &Path,
) -> Result<()> {
    let (file, report) = ingest_csv(open(input)?, width, height, bins, bin_width_ps, skip_invalid)?;
    for (line, msg) in &report.skipped {
        eprintln!("skipped line {line}: {msg}");
    }
    let mut out = create(output)?;
    file.write(&mut out)?;
    out.flush()?;
    eprintln!("ingested {} rows, skipped {}", report.rows, report.skipped.len());
    Ok(())
}
