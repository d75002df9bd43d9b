use crate::manifest::{digest_bytes, FileDigest, HashingReader, HashingWriter, RunManifest};
use crate::{CorrectArgs, HistArgs, InferArgs, OracleArgs, OracleKind, SimulateArgs, SweepArgs};
use quadcorr::accidentals::CorrectedRates;
use quadcorr::coincidence::{
    normalized_g2, normalized_g3, normalized_g4, AnchoredAnalysis, DelayAxis, HistAxis, HistogramScan,
    StreamAnalyzer, WindowCounter, WindowCounts, WindowSpec,
};
use quadcorr::gaussian_oracle::{
    g2_auto, g2_cross, g3_model, g4_model, pn_poisson, pn_squeezed, CorrelationModel,
};
use quadcorr::rates::{infer as infer_rates, infer_with_arm_fit};
use quadcorr::simulator::{sweep_configs, SimConfig, Simulator};
use quadcorr::tagstream::{
    Arm, ChannelId, ReadError, TagFileHeader, TagFileReader, TagFileWriter, TimeTag,
};
use serde_json::json;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufReader, BufWriter};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Progress output; a closed stdout (e.g. piped into `head`) is not an error.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

const READ_CHUNK_TAGS: usize = 1 << 20;
const SIM_CHUNK_TICKS: u64 = 1 << 25;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {msg}")]
    Input { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] quadcorr::Error),
}

impl CliError {
    /// Process exit status: 2 for bad arguments or configuration, 3 for
    /// unreadable or malformed input, 4 when a fit fails to converge.
    pub fn code(&self) -> u8 {
        use quadcorr::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } | CliError::Input { .. } => 3,
            CliError::Core(e) => match e {
                E::NoConvergence { .. } | E::DegenerateInput(_) => 4,
                E::InvalidConfig(_)
                | E::BadRange { .. }
                | E::ZeroBinWidth
                | E::ZeroWindow
                | E::InvalidChannel(_)
                | E::SameChannel(_)
                | E::MismatchedAnchorChannel
                | E::ZeroEfficiency(_)
                | E::DomainError(_)
                | E::InvalidModel(_) => 2,
                _ => 3,
            },
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Sizes the global thread pool from `QUADCORR_THREADS` when set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("QUADCORR_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("QUADCORR_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| usage(format!("cannot size thread pool: {e}")))
}

/// Converts a duration in ns to a whole number of ticks.
fn ns_to_ticks(name: &str, ns: f64, tick_ps: u64) -> CliResult<u64> {
    let ticks = ns * 1000.0 / tick_ps as f64;
    let rounded = ticks.round();
    if !ticks.is_finite() || ticks < 0.0 || (ticks - rounded).abs() > 1e-9 * rounded.max(1.0) {
        return Err(usage(format!(
            "--{name} {ns} ns is not a non-negative multiple of the {tick_ps} ps tick"
        )));
    }
    Ok(rounded as u64)
}

fn parse_floats<const N: usize>(name: &str, s: &str) -> CliResult<[f64; N]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("--{name}: cannot parse {s:?} as numbers")))?;
    v.try_into().map_err(|_| usage(format!("--{name} needs exactly {N} comma-separated values")))
}

/// Parses `12,3,4` into channel groups `[[1,2],[3],[4]]`.
fn parse_channels(s: &str) -> CliResult<Vec<Vec<ChannelId>>> {
    let bad = || usage(format!("--channels: cannot parse {s:?}"));
    s.split(',')
        .map(|g| {
            let g = g.trim();
            if g.is_empty() {
                return Err(bad());
            }
            g.chars()
                .map(|c| {
                    let d = c.to_digit(10).ok_or_else(bad)?;
                    Ok(ChannelId::new(d as u8)?)
                })
                .collect()
        })
        .collect()
}

fn write_output(out: &Path, bytes: &[u8]) -> CliResult<FileDigest> {
    std::fs::write(out, bytes).map_err(io_err(out))?;
    Ok(digest_bytes(out, bytes))
}

fn finish_manifest(mut m: RunManifest, inputs: Vec<FileDigest>, out: FileDigest) -> CliResult<()> {
    m.inputs = inputs;
    let path = PathBuf::from(&out.path);
    m.outputs = vec![out];
    m.write_next_to(&path).map_err(io_err(&path))
}

fn load_config(path: Option<&Path>) -> CliResult<(SimConfig, Option<FileDigest>)> {
    match path {
        None => Ok((SimConfig::default(), None)),
        Some(p) => {
            let text = std::fs::read(p).map_err(io_err(p))?;
            let s = String::from_utf8(text.clone())
                .map_err(|_| CliError::Input { path: p.to_path_buf(), msg: "config is not UTF-8".into() })?;
            Ok((SimConfig::from_toml(&s)?, Some(digest_bytes(p, &text))))
        }
    }
}

// ------------------------------------------------------------ simulate

pub fn simulate(a: &SimulateArgs) -> CliResult<()> {
    let (mut cfg, cfg_digest) = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.run.seed = seed;
    }
    if let Some(d) = a.duration_s {
        cfg.run.duration_s = d;
    }
    cfg.validate()?;
    let mut sim = Simulator::new(&cfg)?;

    let mut part = a.out.as_os_str().to_owned();
    part.push(".part");
    let part = PathBuf::from(part);
    let result = write_simulation(&mut sim, &part);
    let (digest, counts) = match result {
        Ok(v) => v,
        Err(e) => {
            let _ = std::fs::remove_file(&part);
            return Err(e);
        }
    };
    std::fs::rename(&part, &a.out).map_err(io_err(&a.out))?;
    let digest = FileDigest { path: a.out.display().to_string(), ..digest };

    say!("wrote {} tags over {} s to {}", counts.iter().sum::<u64>(), cfg.run.duration_s, a.out.display());
    for (k, n) in counts.iter().enumerate() {
        say!("  channel {}: {} ({:.4e} /s)", k + 1, n, *n as f64 / cfg.run.duration_s);
    }
    let params = json!({ "config": cfg, "duration_ticks": sim.duration_ticks(), "singles": counts });
    let m = RunManifest::new("simulate", Some(cfg.run.seed), params);
    finish_manifest(m, cfg_digest.into_iter().collect(), digest)
}

fn write_simulation(sim: &mut Simulator, part: &Path) -> CliResult<(FileDigest, [u64; 4])> {
    let file = File::create(part).map_err(io_err(part))?;
    let header = TagFileHeader { tick_ps: sim.tick_ps(), duration: sim.duration_ticks() };
    let mut w = TagFileWriter::new(HashingWriter::new(BufWriter::new(file)), header).map_err(io_err(part))?;
    let mut counts = [0u64; 4];
    let mut until = 0u64;
    while !sim.is_done() {
        until = until.saturating_add(SIM_CHUNK_TICKS);
        let tags = sim.next_chunk(until);
        for t in &tags {
            counts[t.channel.index()] += 1;
        }
        w.write_tags(&tags).map_err(|e| read_err(part, e))?;
    }
    let hw = w.finish().map_err(io_err(part))?;
    Ok((hw.finish(part).map_err(io_err(part))?, counts))
}

// ------------------------------------------------------------ file scans

fn read_err(path: &Path, e: ReadError) -> CliError {
    match e {
        ReadError::Io(source) => CliError::Io { path: path.to_path_buf(), source },
        ReadError::Format(e) => CliError::Input { path: path.to_path_buf(), msg: e.to_string() },
    }
}

struct Scanned<A> {
    analysis: A,
    header: TagFileHeader,
    singles: [u64; 4],
    digest: FileDigest,
}

impl<A> Scanned<A> {
    fn tick_s(&self) -> f64 {
        self.header.tick_ps as f64 * 1e-12
    }

    fn duration_s(&self) -> f64 {
        self.header.duration as f64 * self.tick_s()
    }

    fn singles_rates(&self) -> [f64; 4] {
        let t = self.duration_s();
        self.singles.map(|n| n as f64 / t)
    }
}

fn open_tags(path: &Path) -> CliResult<TagFileReader<HashingReader<BufReader<File>>>> {
    let f = File::open(path).map_err(io_err(path))?;
    TagFileReader::new(HashingReader::new(BufReader::new(f))).map_err(|e| read_err(path, e))
}

/// Streams a tag file through `analysis` in bounded memory.
fn scan_file<A: AnchoredAnalysis>(
    mut reader: TagFileReader<HashingReader<BufReader<File>>>,
    path: &Path,
    analysis: A,
) -> CliResult<Scanned<A>> {
    let header = reader.header();
    if header.duration == 0 {
        return Err(CliError::Input { path: path.to_path_buf(), msg: "stream duration is zero".into() });
    }
    let mut an = StreamAnalyzer::new(analysis);
    let mut singles = [0u64; 4];
    let mut buf: Vec<TimeTag> = Vec::with_capacity(READ_CHUNK_TAGS);
    loop {
        buf.clear();
        let n = reader.read_chunk(&mut buf, READ_CHUNK_TAGS).map_err(|e| read_err(path, e))?;
        if n == 0 {
            break;
        }
        for t in &buf {
            singles[t.channel.index()] += 1;
        }
        // ties at the last tick may continue in the next chunk
        let last = buf.last().map_or(0, |t| t.ticks);
        an.feed(&buf, last);
    }
    let digest = reader.into_inner().finish(path);
    Ok(Scanned { analysis: an.finish(), header, singles, digest })
}

fn hist_axis(a: &HistArgs, tick_ps: u64) -> CliResult<HistAxis> {
    let bin = ns_to_ticks("bin-ns", a.bin_ns, tick_ps)?;
    let range = ns_to_ticks("range-ns", a.range_ns, tick_ps)?;
    if bin == 0 {
        return Err(usage("--bin-ns must be at least one tick"));
    }
    Ok(HistAxis::symmetric(range, bin)?)
}

fn group_rate(rates: &[f64; 4], g: &[ChannelId]) -> f64 {
    g.iter().map(|c| rates[c.index()]).sum()
}

fn group_label(g: &[ChannelId]) -> String {
    g.iter().map(|c| c.get().to_string()).collect()
}

fn single(groups: &[Vec<ChannelId>], k: usize) -> CliResult<ChannelId> {
    match groups[k].as_slice() {
        [c] => Ok(*c),
        _ => Err(usage("only the first channel group may hold several channels")),
    }
}

fn hist_params(cmd: &str, a: &HistArgs, channels: &str) -> serde_json::Value {
    json!({ "command": cmd, "channels": channels, "bin_ns": a.bin_ns, "range_ns": a.range_ns })
}

pub fn g2(a: &HistArgs) -> CliResult<()> {
    let chans = a.channels.as_deref().unwrap_or("1,3");
    let groups = parse_channels(chans)?;
    if groups.len() != 2 {
        return Err(usage("g2 needs two channel groups, e.g. 1,3"));
    }
    let j = single(&groups, 1)?;
    let reader = open_tags(&a.input)?;
    let axis = hist_axis(a, reader.header().tick_ps)?;
    let scan = HistogramScan::new(&groups[0], [DelayAxis::new(j, axis)])?;
    let s = scan_file(reader, &a.input, scan)?;
    let r = s.singles_rates();
    let norm = normalized_g2(
        s.analysis.histogram().clone(),
        group_rate(&r, &groups[0]),
        r[j.index()],
        s.tick_s(),
        s.duration_s(),
    )
    .map_err(|e| CliError::Input { path: a.input.clone(), msg: e.to_string() })?;
    let peak = norm.hist.argmax();
    let ns = s.tick_s() * 1e9;
    let mut csv = Vec::new();
    norm.write_csv(&mut csv, &[("channels", chans.to_string()), ("input", a.input.display().to_string())])
        .expect("write to memory");
    say!(
        "g2({} -> {}): peak {:.4} at [{}, {}) ns, {} pairs",
        group_label(&groups[0]),
        j.get(),
        norm.value(peak),
        axis.lower_edge(peak[0]) as f64 * ns,
        axis.lower_edge(peak[0] + 1) as f64 * ns,
        norm.hist.total()
    );
    let out = write_output(&a.out, &csv)?;
    finish_manifest(RunManifest::new("g2", None, hist_params("g2", a, chans)), vec![s.digest], out)
}

pub fn g3(a: &HistArgs) -> CliResult<()> {
    let chans = a.channels.as_deref().unwrap_or("12,3,4");
    let groups = parse_channels(chans)?;
    if groups.len() != 3 {
        return Err(usage("g3 needs three channel groups, e.g. 12,3,4"));
    }
    let (b, c) = (single(&groups, 1)?, single(&groups, 2)?);
    let reader = open_tags(&a.input)?;
    let axis = hist_axis(a, reader.header().tick_ps)?;
    let scan = HistogramScan::g3(&groups[0], b, c, [axis; 2])?;
    let s = scan_file(reader, &a.input, scan)?;
    let r = s.singles_rates();
    let norm = normalized_g3(
        s.analysis.histogram().clone(),
        [group_rate(&r, &groups[0]), r[b.index()], r[c.index()]],
        s.tick_s(),
        s.duration_s(),
    )
    .map_err(|e| CliError::Input { path: a.input.clone(), msg: e.to_string() })?;
    let peak = norm.hist.argmax();
    let ns = s.tick_s() * 1e9;
    let mut csv = Vec::new();
    norm.write_csv(&mut csv, &[("channels", chans.to_string()), ("input", a.input.display().to_string())])
        .expect("write to memory");
    say!(
        "g3({} -> {},{}): peak {:.4} at ({}, {}) ns, {} triplets",
        group_label(&groups[0]),
        b.get(),
        c.get(),
        norm.value(peak),
        axis.lower_edge(peak[0]) as f64 * ns,
        axis.lower_edge(peak[1]) as f64 * ns,
        norm.hist.total()
    );
    let out = write_output(&a.out, &csv)?;
    finish_manifest(RunManifest::new("g3", None, hist_params("g3", a, chans)), vec![s.digest], out)
}

pub fn g4(a: &HistArgs) -> CliResult<()> {
    let chans = a.channels.as_deref().unwrap_or("1,2,3,4");
    if parse_channels(chans)? != parse_channels("1,2,3,4")? {
        return Err(usage("g4 is defined on channels 1,2,3,4 only"));
    }
    let reader = open_tags(&a.input)?;
    let axis = hist_axis(a, reader.header().tick_ps)?;
    let scan = HistogramScan::g4([axis; 3])?;
    let s = scan_file(reader, &a.input, scan)?;
    let r = s.singles_rates();
    let norm = normalized_g4(s.analysis.histogram().clone(), r, s.tick_s(), s.duration_s())
        .map_err(|e| CliError::Input { path: a.input.clone(), msg: e.to_string() })?;
    let peak = norm.hist.argmax();
    let ns = s.tick_s() * 1e9;
    let mut csv = Vec::new();
    norm.write_csv(
        &mut csv,
        &[
            ("channels", chans.to_string()),
            ("axes", "t1-t2, t3-t1, t4-t1".to_string()),
            ("input", a.input.display().to_string()),
        ],
    )
    .expect("write to memory");
    say!(
        "g4: peak {:.4} at ({}, {}, {}) ns, {} quadruplets",
        norm.value(peak),
        axis.lower_edge(peak[0]) as f64 * ns,
        axis.lower_edge(peak[1]) as f64 * ns,
        axis.lower_edge(peak[2]) as f64 * ns,
        norm.hist.total()
    );
    let out = write_output(&a.out, &csv)?;
    finish_manifest(RunManifest::new("g4", None, hist_params("g4", a, chans)), vec![s.digest], out)
}

// ------------------------------------------------------------ correct / infer

pub fn correct(a: &CorrectArgs) -> CliResult<()> {
    let reader = open_tags(&a.input)?;
    let tick_ps = reader.header().tick_ps;
    let t_c = ns_to_ticks("tc-ns", a.tc_ns, tick_ps)?;
    if t_c == 0 {
        return Err(quadcorr::Error::ZeroWindow.into());
    }
    let mut window = WindowSpec::new(t_c);
    if let Some(off) = a.as_offset_ns {
        window.as_offset = ns_to_ticks("as-offset-ns", off, tick_ps)?;
    }
    let s = scan_file(reader, &a.input, WindowCounter::new(window))?;
    let w = WindowCounts::from_counter(&s.analysis, s.singles, s.header.duration, tick_ps)?;
    let c = CorrectedRates::from_counts(&w);

    let mut text = String::new();
    let _ = writeln!(text, "input = {}", a.input.display());
    let _ = writeln!(text, "tick_ps = {tick_ps}");
    let _ = writeln!(text, "duration_s = {:e}", w.duration_seconds());
    let _ = writeln!(text, "t_c_ticks = {}", window.t_c);
    let _ = writeln!(text, "as_offset_ticks = {}", window.as_offset);
    for (k, n) in w.singles.iter().enumerate() {
        let _ = writeln!(text, "N{} = {n}", k + 1);
    }
    for m in (0..16usize).filter(|m| m.count_ones() >= 2) {
        let _ = writeln!(text, "N{} = {}", quadcorr::accidentals::label(m), w.counts[m]);
    }
    text.push_str(&c.report());
    say!(
        "c_p = {:.4e} /s, c134+c234 = {:.4e} /s, c123+c124 = {:.4e} /s, c_q = {:.4e} /s",
        c.c_p(),
        c.triplets_one_stokes(),
        c.triplets_two_stokes(),
        c.c_q()
    );
    let out = write_output(&a.out, text.as_bytes())?;
    let params = json!({ "tc_ns": a.tc_ns, "t_c_ticks": window.t_c, "as_offset_ticks": window.as_offset });
    finish_manifest(RunManifest::new("correct", None, params), vec![s.digest], out)
}

fn parse_report(path: &Path, text: &str) -> CliResult<CorrectedRates> {
    let bad = |msg: String| CliError::Input { path: path.to_path_buf(), msg };
    let mut kv = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| bad(format!("line {}: expected `key = value`", n + 1)))?;
        kv.insert(k.trim(), v.trim());
    }
    let num = |k: &str| -> CliResult<f64> {
        let v = kv.get(k).ok_or_else(|| bad(format!("missing `{k}`")))?;
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| bad(format!("`{k}` is not a number: {v:?}")))
    };
    let t_c = num("t_c_s")?;
    if !(t_c > 0.0) {
        return Err(bad("t_c_s must be positive".into()));
    }
    let mut observed = [0.0; 16];
    for (m, o) in observed.iter_mut().enumerate().skip(1) {
        *o = num(&format!("R{}", quadcorr::accidentals::label(m)))?;
    }
    Ok(CorrectedRates::from_rates(observed, t_c))
}

pub fn infer(a: &InferArgs) -> CliResult<()> {
    let eta_prime = a.eta_prime.as_deref().map(|s| parse_floats::<4>("eta-prime", s)).transpose()?;
    let eta = parse_floats::<4>("eta", a.eta.as_deref().unwrap_or("0.022,0.023,0.025,0.021"))?;
    let raw = std::fs::read(&a.report).map_err(io_err(&a.report))?;
    let text = String::from_utf8(raw.clone())
        .map_err(|_| CliError::Input { path: a.report.clone(), msg: "report is not UTF-8".into() })?;
    let c = parse_report(&a.report, &text)?;
    let (inf, params) = match eta_prime {
        Some(ep) => (infer_with_arm_fit(&c, ep)?, json!({ "eta_prime": ep })),
        None => (infer_rates(&c, eta)?, json!({ "eta": eta })),
    };
    let report = inf.report();
    say!("g_p = {:.4e} /s, g_q = {:.4e} /s", inf.rates.g_p, inf.rates.g_q);
    let out = write_output(&a.out, report.as_bytes())?;
    finish_manifest(RunManifest::new("infer", None, params), vec![digest_bytes(&a.report, &raw)], out)
}

// ------------------------------------------------------------ oracle

fn grid(bin_ns: f64, range_ns: f64) -> CliResult<Vec<f64>> {
    if !(bin_ns > 0.0) || !(range_ns >= 0.0) {
        return Err(usage("--bin-ns must be positive and --range-ns non-negative"));
    }
    let n = (range_ns / bin_ns + 1e-9).floor() as i64;
    Ok((-n..=n).map(|k| k as f64 * bin_ns).collect())
}

pub fn oracle(a: &OracleArgs) -> CliResult<()> {
    let mut m = CorrelationModel::from_peak_g2(1e6, a.g2_peak, a.tau_c_ns, a.tau_0_ns)?;
    m.one_sided = a.one_sided;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# g2_peak = {}\n# tau_c_ns = {}\n# tau_0_ns = {}\n# one_sided = {}",
        a.g2_peak, a.tau_c_ns, a.tau_0_ns, a.one_sided
    );
    match a.kind {
        OracleKind::G2 => {
            let _ = writeln!(s, "tau_ns,g2_cross,g2_auto_stokes,g2_auto_anti");
            for t in grid(a.bin_ns, a.range_ns)? {
                let _ = writeln!(
                    s,
                    "{t},{:.9e},{:.9e},{:.9e}",
                    g2_cross(&m, t),
                    g2_auto(&m, t, Arm::Stokes),
                    g2_auto(&m, t, Arm::AntiStokes)
                );
            }
        }
        OracleKind::G3 => {
            let _ = writeln!(s, "tau_3s_ns,tau_4s_ns,g3");
            let g = grid(a.bin_ns, a.range_ns)?;
            for &t3 in &g {
                for &t4 in &g {
                    let _ = writeln!(s, "{t3},{t4},{:.9e}", g3_model(&m, t3, t4));
                }
            }
        }
        OracleKind::G4 => {
            let _ = writeln!(s, "# axes = t1-t2, t3-t1, t4-t1");
            let _ = writeln!(s, "tau0_ns,tau1_ns,tau2_ns,g4");
            let g = grid(a.bin_ns, a.range_ns)?;
            for &d12 in &g {
                for &d31 in &g {
                    for &d41 in &g {
                        let v = g4_model(&m, [0.0, -d12, d31, d41]);
                        let _ = writeln!(s, "{d12},{d31},{d41},{v:.9e}");
                    }
                }
            }
        }
        OracleKind::Pn => {
            if !a.zeta.is_finite() || !(a.mu >= 0.0) {
                return Err(usage("--zeta must be finite and --mu non-negative"));
            }
            let _ = writeln!(s, "# zeta = {}\n# mu = {}", a.zeta, a.mu);
            let _ = writeln!(s, "n,p_squeezed,p_poisson");
            for n in 0..=a.n_max {
                let _ = writeln!(s, "{n},{:.9e},{:.9e}", pn_squeezed(a.zeta, n), pn_poisson(a.mu, n));
            }
        }
    }
    let out = write_output(&a.out, s.as_bytes())?;
    let params = json!({
        "kind": format!("{:?}", a.kind).to_lowercase(),
        "g2_peak": a.g2_peak, "tau_c_ns": a.tau_c_ns, "tau_0_ns": a.tau_0_ns,
        "one_sided": a.one_sided, "bin_ns": a.bin_ns, "range_ns": a.range_ns,
        "zeta": a.zeta, "mu": a.mu, "n_max": a.n_max,
    });
    say!("wrote {}", a.out.display());
    finish_manifest(RunManifest::new("oracle", None, params), Vec::new(), out)
}

// ------------------------------------------------------------ sweep

struct SweepRow {
    level: f64,
    seed: u64,
    singles: [f64; 2],
    c: CorrectedRates,
}

fn sweep_level(cfg: &SimConfig, t_c: u64) -> CliResult<WindowCounts> {
    let mut sim = Simulator::new(cfg)?;
    let mut an = StreamAnalyzer::new(WindowCounter::new(WindowSpec::new(t_c)));
    let mut singles = [0u64; 4];
    let mut until = 0u64;
    while !sim.is_done() {
        until = until.saturating_add(SIM_CHUNK_TICKS);
        let tags = sim.next_chunk(until);
        for t in &tags {
            singles[t.channel.index()] += 1;
        }
        an.feed(&tags, sim.emitted_until());
    }
    Ok(WindowCounts::from_counter(&an.finish(), singles, sim.duration_ticks(), sim.tick_ps())?)
}

/// Least-squares slope of `ln y` against `ln x`; undefined if any point is
/// not positive.
fn log_slope(points: impl Iterator<Item = (f64, f64)>) -> Option<f64> {
    let p: Vec<(f64, f64)> = points.map(|(x, y)| (x.ln(), y.ln())).collect();
    if p.len() < 2 || p.iter().any(|q| !q.0.is_finite() || !q.1.is_finite()) {
        return None;
    }
    let n = p.len() as f64;
    let mx = p.iter().map(|q| q.0).sum::<f64>() / n;
    let my = p.iter().map(|q| q.1).sum::<f64>() / n;
    let sxx: f64 = p.iter().map(|q| (q.0 - mx).powi(2)).sum();
    let sxy: f64 = p.iter().map(|q| (q.0 - mx) * (q.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn sweep(a: &SweepArgs) -> CliResult<()> {
    let (mut base, cfg_digest) = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        base.run.seed = seed;
    }
    if let Some(d) = a.duration_s {
        base.run.duration_s = d;
    }
    base.validate()?;
    let levels: Vec<f64> = a
        .levels
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("--levels: cannot parse {:?}", a.levels)))?;
    if levels.is_empty() || levels.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(usage("--levels must be positive numbers"));
    }
    let t_c = ns_to_ticks("tc-ns", a.tc_ns, base.timing.tick_ps)?;
    if t_c == 0 {
        return Err(quadcorr::Error::ZeroWindow.into());
    }

    let mut rows = Vec::new();
    for (level, cfg) in levels.iter().zip(sweep_configs(&base, &levels)) {
        let w = sweep_level(&cfg, t_c)?;
        let r = w.singles_rates();
        let c = CorrectedRates::from_counts(&w);
        say!(
            "level {level}: R_s = {:.4e}, R_a = {:.4e}, c_p = {:.4e}, c_q = {:.4e}",
            r[0] + r[1],
            r[2] + r[3],
            c.c_p(),
            c.c_q()
        );
        rows.push(SweepRow { level: *level, seed: cfg.run.seed, singles: [r[0] + r[1], r[2] + r[3]], c });
    }

    let c_t = |c: &CorrectedRates| c.triplets_one_stokes() + c.triplets_two_stokes();
    let mut s = String::new();
    let slope = |f: &dyn Fn(&SweepRow) -> f64| {
        log_slope(rows.iter().map(|r| (r.level, f(r)))).map_or("nan".to_string(), |v| format!("{v:.4}"))
    };
    let _ = writeln!(s, "# t_c_ns = {}", a.tc_ns);
    let _ = writeln!(s, "# duration_s = {}", base.run.duration_s);
    let _ = writeln!(s, "# slope.c_p = {}", slope(&|r| r.c.c_p()));
    let _ = writeln!(s, "# slope.c_t = {}", slope(&|r| c_t(&r.c)));
    let _ = writeln!(s, "# slope.c_q = {}", slope(&|r| r.c.c_q()));
    let _ = writeln!(s, "level,seed,R_s,R_a,c_p,c_t,c_q,raw_q");
    for r in &rows {
        let _ = writeln!(
            s,
            "{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}",
            r.level,
            r.seed,
            r.singles[0],
            r.singles[1],
            r.c.c_p(),
            c_t(&r.c),
            r.c.c_q(),
            r.c.observed[15]
        );
    }
    say!("log-log slopes: c_p {}, c_t {}, c_q {}", slope(&|r| r.c.c_p()), slope(&|r| c_t(&r.c)), slope(&|r| r.c.c_q()));
    let out = write_output(&a.out, s.as_bytes())?;
    let params = json!({ "base_config": base, "levels": levels, "tc_ns": a.tc_ns });
    finish_manifest(RunManifest::new("sweep", Some(base.run.seed), params), cfg_digest.into_iter().collect(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_groups() {
        let g = parse_channels("12,3,4").unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(group_label(&g[0]), "12");
        assert!(parse_channels("1,5").is_err());
        assert!(parse_channels("1,,3").is_err());
        assert!(parse_channels("a,3").is_err());
    }

    #[test]
    fn tick_conversion_is_exact() {
        assert_eq!(ns_to_ticks("x", 20.0, 2000).unwrap(), 10);
        assert_eq!(ns_to_ticks("x", 0.5, 250).unwrap(), 2);
        assert!(ns_to_ticks("x", 3.0, 2000).is_err());
        assert!(ns_to_ticks("x", -2.0, 2000).is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let s = log_slope([0.25, 0.5, 1.0].iter().map(|&x| (x, 3.0 * x * x))).unwrap();
        assert!((s - 2.0).abs() < 1e-12);
        assert!(log_slope([(1.0, -1.0), (2.0, 1.0)].into_iter()).is_none());
    }

    #[test]
    fn report_round_trip() {
        let mut obs = [0.0; 16];
        for (m, o) in obs.iter_mut().enumerate().skip(1) {
            *o = 1e3 / (1 + m.count_ones()) as f64 + m as f64 * 0.123456789;
        }
        let c = CorrectedRates::from_rates(obs, 2e-8);
        let back = parse_report(Path::new("r"), &c.report()).unwrap();
        assert_eq!(back.observed, c.observed);
        assert!(parse_report(Path::new("r"), "t_c_s = 2e-8\n").is_err());
        assert!(parse_report(Path::new("r"), "garbage\n").is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Core(quadcorr::Error::NoConvergence { iterations: 1, last_step: 0.0 }).code(), 4);
        assert_eq!(CliError::Core(quadcorr::Error::ZeroBinWidth).code(), 2);
        assert_eq!(CliError::Core(quadcorr::Error::BadMagic).code(), 3);
        assert_eq!(usage("x").code(), 2);
    }
}
