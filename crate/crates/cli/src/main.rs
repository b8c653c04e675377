use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;

use dasr_core::audio::write_wav_mono;
use dasr_core::beamform::BeamformerKind;
use dasr_core::diarize::{speaker_labels, OutputProfile, PostprocessMethod, UtteranceBoundaries};
use dasr_core::error::{Error, Result};
use dasr_core::formats;
use dasr_core::gss::expand_segment;
use dasr_core::metrics::{count_metrics, der};
use dasr_core::micselect::SelectionMethod;
use dasr_core::pipeline::{
    enhance_chunkwise, enhance_segment, run_diarization_assembly, select_for_segment, write_demo_session,
    PipelineConfig, SessionData,
};
use dasr_core::spkcount::count_speakers;

#[derive(Parser)]
#[command(name = "dasr", version, about = "Distant multi-talker ASR frontend")]
struct Cli {
    /// Pipeline configuration (TOML). Flags given on the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Microphone subset of every utterance in an RTTM.
    SelectMics {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        rttm: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        selection: SelectionArgs,
    },
    /// Utterance-wise enhancement guided by diarization boundaries.
    Enhance {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        rttm: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Only this speaker's utterances.
        #[arg(long)]
        speaker: Option<String>,
        /// Only this utterance of `--speaker`, counted from 0 in start order.
        #[arg(long, requires = "speaker")]
        index: Option<usize>,
        /// Context added on both sides, seconds.
        #[arg(long)]
        context: Option<f64>,
        #[command(flatten)]
        selection: SelectionArgs,
        #[command(flatten)]
        wpe: WpeArgs,
        #[command(flatten)]
        beamformer: BeamformerArgs,
    },
    /// Chunk-wise enhancement guided by each microphone's posteriors.
    ChunkEnhance {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        wpe: WpeArgs,
        #[command(flatten)]
        beamformer: BeamformerArgs,
    },
    /// Session speaker count from embeddings.
    CountSpeakers {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        counting: CountingArgs,
    },
    /// Counting, per-mic clustering and post-processing, then fusion.
    DiarizeAssemble {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        counting: CountingArgs,
        #[command(flatten)]
        postprocess: PostprocessArgs,
    },
    /// Majority-vote fusion of several RTTMs of one session.
    Fuse {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        frame: f64,
    },
    /// Turns a speakers x frames activity matrix into an RTTM.
    Postprocess {
        #[arg(long)]
        activity: PathBuf,
        #[arg(long)]
        frame_rate: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "session")]
        session: String,
        #[command(flatten)]
        postprocess: PostprocessArgs,
    },
    /// Diarization error rate of a hypothesis RTTM.
    Score {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        collar: f64,
        /// Report file; standard output if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Speaker counting accuracy and error over sessions.
    ScoreCount {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Writes the bundled synthetic 4-mic session with its inputs.
    SynthSession {
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct SelectionArgs {
    #[arg(long)]
    method: Option<SelectionMethod>,
    #[arg(long)]
    kmin: Option<usize>,
    #[arg(long)]
    ratio: Option<f64>,
}

#[derive(Args)]
struct WpeArgs {
    /// Skip dereverberation.
    #[arg(long)]
    no_wpe: bool,
    #[arg(long)]
    wpe_taps: Option<usize>,
    #[arg(long)]
    wpe_delay: Option<usize>,
    #[arg(long)]
    wpe_iters: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct BeamformerArgs {
    #[arg(long)]
    beamformer: Option<BeamformerKind>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    ban: Option<Switch>,
    #[arg(long, allow_negative_numbers = true)]
    delta_db: Option<f64>,
}

#[derive(Args)]
struct CountingArgs {
    #[arg(long)]
    subchunk: Option<f64>,
    #[arg(long)]
    tmin: Option<f64>,
    #[arg(long)]
    theta_mic: Option<f64>,
    #[arg(long)]
    tcorr: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Eend,
    Tsvad,
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    ForAsr,
    ForGss,
}

#[derive(Args)]
struct PostprocessArgs {
    #[arg(long)]
    pp_method: Option<Method>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    offset: Option<f64>,
    #[arg(long)]
    merge: Option<f64>,
    #[arg(long)]
    profile: Option<Profile>,
}

impl SelectionArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.selection.method, self.method);
        set(&mut cfg.selection.k_min, self.kmin);
        set(&mut cfg.selection.ratio_k1, self.ratio);
    }
}

impl WpeArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if self.no_wpe {
            cfg.dereverberate = false;
        }
        set(&mut cfg.wpe.taps, self.wpe_taps);
        set(&mut cfg.wpe.delay, self.wpe_delay);
        set(&mut cfg.wpe.iterations, self.wpe_iters);
    }
}

impl BeamformerArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.beamformer.kind, self.beamformer);
        set(&mut cfg.beamformer.gamma, self.gamma);
        set(&mut cfg.beamformer.ban, self.ban.map(|s| matches!(s, Switch::On)));
        set(&mut cfg.beamformer.delta_db, self.delta_db);
    }
}

impl CountingArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        set(&mut cfg.counting.subchunk, self.subchunk);
        set(&mut cfg.counting.t_min, self.tmin);
        set(&mut cfg.counting.theta_mic, self.theta_mic);
        set(&mut cfg.counting.t_corr, self.tcorr);
    }
}

impl PostprocessArgs {
    fn apply(&self, cfg: &mut PipelineConfig) {
        let pp = &mut cfg.postprocessing;
        set(
            &mut pp.method,
            self.pp_method.map(|m| match m {
                Method::Eend => PostprocessMethod::Eend,
                Method::Tsvad => PostprocessMethod::Tsvad,
            }),
        );
        set(&mut pp.theta, self.theta);
        set(&mut pp.offset, self.offset);
        set(&mut pp.merge, self.merge);
        set(
            &mut pp.profile,
            self.profile.map(|p| match p {
                Profile::ForAsr => OutputProfile::ForAsr,
                Profile::ForGss => OutputProfile::ForGss,
            }),
        );
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
        warn!("thread pool: {e}");
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);
    match cli.command {
        Command::SelectMics { manifest, rttm, out, selection } => {
            selection.apply(&mut cfg);
            cfg.validate()?;
            let session = SessionData::load(&manifest)?;
            let c50 = session.c50()?;
            let (_, boundaries) = formats::read_rttm(&rttm)?;
            let ids = &session.wave.channel_ids;
            let mut text = String::new();
            for s in &boundaries.segments {
                let window = expand_segment(s.start, s.end, cfg.context, session.wave.duration())?;
                let (mics, branch) =
                    select_for_segment(&session.wave, s.start, s.end, window, c50.as_deref(), &cfg.selection)?;
                let names: Vec<&str> = mics.iter().map(|&m| ids[m].as_str()).collect();
                let branch = branch.map_or("-".to_string(), |b| format!("{b:?}").to_lowercase());
                text.push_str(&format!("{} {:.3} {:.3} {} {}\n", s.speaker, s.start, s.end, branch, names.join(",")));
            }
            formats::write_bytes(&out, text.as_bytes())
        }
        Command::Enhance { manifest, rttm, out_dir, speaker, index, context, selection, wpe, beamformer } => {
            set(&mut cfg.context, context);
            selection.apply(&mut cfg);
            wpe.apply(&mut cfg);
            beamformer.apply(&mut cfg);
            cfg.validate()?;
            let session = SessionData::load(&manifest)?;
            let c50 = session.c50()?;
            let (_, boundaries) = formats::read_rttm(&rttm)?;
            let jobs = utterances(&boundaries, speaker.as_deref(), index)?;
            let name = session.manifest.session_name().to_string();
            info!("enhancing {} utterances", jobs.len());
            let results = jobs
                .par_iter()
                .map(|(spk, _, start, end)| {
                    enhance_segment(&session.wave, &boundaries, spk, *start, *end, c50.as_deref(), &cfg)
                })
                .collect::<Result<Vec<_>>>()?;
            ensure_dir(&out_dir)?;
            for ((spk, j, start, end), out) in jobs.iter().zip(&results) {
                info!("{spk} #{j} [{start:.2}, {end:.2}]: {} mics, reference {}", out.mics.len(), out.reference);
                let path = out_dir.join(format!("{name}_{spk}_{j:04}.wav"));
                write_wav_mono(&path, &out.samples, out.sample_rate)?;
            }
            Ok(())
        }
        Command::ChunkEnhance { manifest, out_dir, wpe, beamformer } => {
            wpe.apply(&mut cfg);
            beamformer.apply(&mut cfg);
            cfg.validate()?;
            let session = SessionData::load(&manifest)?;
            let post = session.posteriors(cfg.chunk)?;
            let out = enhance_chunkwise(&session.wave, &post, &cfg)?;
            ensure_dir(&out_dir)?;
            for (m, chunks) in out.iter().enumerate() {
                for (i, locals) in chunks.iter().enumerate() {
                    for (l, samples) in locals.iter().enumerate() {
                        let path = out_dir.join(format!("m{m}_c{i}_s{l}.wav"));
                        write_wav_mono(&path, samples, session.wave.sample_rate)?;
                    }
                }
            }
            Ok(())
        }
        Command::CountSpeakers { manifest, out, counting } => {
            counting.apply(&mut cfg);
            cfg.validate()?;
            let session = SessionData::load(&manifest)?;
            let estimate = count_speakers(&session.wave, &session.embeddings()?, &cfg.counting)?;
            for g in &estimate.per_group {
                info!("mics {:?}: {} speakers from {} embeddings", g.mics, g.count, g.weight);
            }
            let line = format!("{} {}\n", session.manifest.session_name(), estimate.session);
            formats::write_bytes(&out, line.as_bytes())
        }
        Command::DiarizeAssemble { manifest, out_dir, counting, postprocess } => {
            counting.apply(&mut cfg);
            postprocess.apply(&mut cfg);
            cfg.validate()?;
            let session = SessionData::load(&manifest)?;
            let post = session.posteriors(cfg.chunk)?;
            let out = run_diarization_assembly(&session.wave, &post, &session.embeddings()?, &cfg)?;
            let name = session.manifest.session_name();
            for (m, a) in out.per_mic.iter().enumerate() {
                formats::write_rttm(&out_dir.join(format!("mic{m}.rttm")), name, &a.boundaries)?;
            }
            formats::write_rttm(&out_dir.join("fused.rttm"), name, &out.fused)?;
            formats::write_bytes(&out_dir.join("count.txt"), format!("{name} {}\n", out.count.session).as_bytes())
        }
        Command::Fuse { inputs, out, frame } => {
            let mut session = None;
            let mut hyps = Vec::with_capacity(inputs.len());
            for path in &inputs {
                let (name, b) = formats::read_rttm(path)?;
                match &session {
                    None => session = Some(name),
                    Some(s) if *s != name => warn!("{} holds session '{name}', expected '{s}'", path.display()),
                    Some(_) => {}
                }
                hyps.push(b);
            }
            let fused = dasr_core::fusion::fuse(&hyps, frame)?;
            formats::write_rttm(&out, session.as_deref().unwrap_or("session"), &fused)
        }
        Command::Postprocess { activity, frame_rate, out, session, postprocess } => {
            postprocess.apply(&mut cfg);
            cfg.validate()?;
            if !(frame_rate > 0.0) {
                return Err(Error::InvalidInput("frame rate must be positive".into()));
            }
            let a = formats::read_dmx(&activity)?;
            let b = cfg.postprocessing.apply(&a, frame_rate, &speaker_labels(a.nrows()))?;
            formats::write_rttm(&out, &session, &b)
        }
        Command::Score { reference, hyp, collar, out } => {
            let (_, r) = formats::read_rttm(&reference)?;
            let (_, h) = formats::read_rttm(&hyp)?;
            report(out.as_deref(), &der(&r, &h, collar)?.to_string())
        }
        Command::ScoreCount { reference, hyp, out } => {
            let r = formats::read_counts(&reference)?;
            let h = formats::read_counts(&hyp)?;
            let (rv, hv) = paired_counts(&r, &h)?;
            report(out.as_deref(), &count_metrics(&rv, &hv)?.to_string())
        }
        Command::SynthSession { out_dir } => {
            let path = write_demo_session(&out_dir, cfg.seed)?;
            info!("wrote {}", path.display());
            Ok(())
        }
    }
}

type Job = (String, usize, f64, f64);

/// Utterances to enhance as (speaker, per-speaker index, start, end).
fn utterances(b: &UtteranceBoundaries, speaker: Option<&str>, index: Option<usize>) -> Result<Vec<Job>> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let mut jobs = Vec::new();
    for s in &b.segments {
        let j = seen.entry(&s.speaker).or_default();
        if speaker.is_none_or(|w| w == s.speaker) && index.is_none_or(|i| i == *j) {
            jobs.push((s.speaker.clone(), *j, s.start, s.end));
        }
        *j += 1;
    }
    if jobs.is_empty() {
        return Err(Error::InvalidInput("no utterance matches the selection".into()));
    }
    Ok(jobs)
}

fn paired_counts(r: &BTreeMap<String, usize>, h: &BTreeMap<String, usize>) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rv = Vec::new();
    let mut hv = Vec::new();
    for (session, &count) in r {
        let hyp = h
            .get(session)
            .ok_or_else(|| Error::InvalidInput(format!("no hypothesis count for session '{session}'")))?;
        rv.push(count);
        hv.push(*hyp);
    }
    if let Some(extra) = h.keys().find(|s| !r.contains_key(*s)) {
        warn!("hypothesis session '{extra}' has no reference");
    }
    Ok((rv, hv))
}

fn report(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => formats::write_bytes(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}
