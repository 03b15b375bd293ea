//! The six pipeline verbs. Each reads its inputs from the output directory,
//! writes its artifacts there and records them in the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use taskspace::analytics::{
    correlate_spaces, cosine_space, jaccard_space, nvo_control, phenomenon_hypothesis, series_csv,
    series_from_probes, wasserstein_control, weighted_space, within_phenomenon_stats, Metric, TaskSpace,
};
use taskspace::corpus::{
    export_suite, generate_suite, ingest_blimp, make_pretrain_corpus, IngestOptions, TaskSuite, MANIFEST_FILE,
};
use taskspace::ftgd::SubspaceDelta;
use taskspace::model::{self as lm, LmCheckpoint, PretrainRun, TrainError};
use taskspace::probing::{gradient_probe, transfer_probe, GradientProbe, ProbedTask};
use taskspace::Checkpoint;

use crate::config::{CorpusSource, RunConfig};
use crate::layout::{require, Layout};
use crate::manifest::{files_under, RunManifest};
use crate::svg::heatmap;
use crate::CliError;

/// Which checkpoints to probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    Final,
    All,
    Epoch(usize),
}

impl FromStr for Selector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "final" => Ok(Selector::Final),
            "all" => Ok(Selector::All),
            e => e
                .parse()
                .map(Selector::Epoch)
                .map_err(|_| format!("expected `final`, `all` or an epoch number, got `{s}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeOptions {
    pub selector: Selector,
    pub gradient_only: bool,
    pub jobs: usize,
}

pub struct Run {
    pub cfg: RunConfig,
    pub layout: Layout,
    pub manifest: RunManifest,
}

impl Run {
    pub fn new(cfg: RunConfig) -> Result<Self, CliError> {
        let layout = Layout::new(cfg.out.clone());
        fs::create_dir_all(&layout.root).map_err(|e| CliError::Config {
            field: "out".into(),
            reason: format!("cannot create {}: {e}", layout.root.display()),
        })?;
        let manifest = RunManifest::load_or_new(&layout, &cfg.hash(), cfg.seed())?;
        Ok(Self { cfg, layout, manifest })
    }

    fn finish(&mut self, stage: &str, paths: &[PathBuf], start: Instant, notes: Vec<String>) -> Result<(), CliError> {
        self.manifest
            .record(&self.layout, stage, paths, start.elapsed().as_secs_f64(), notes)?;
        self.manifest.save(&self.layout)
    }

    pub fn load_suite(&self) -> Result<TaskSuite, CliError> {
        let dir = self.layout.suite();
        require(&dir.join(MANIFEST_FILE))?;
        Ok(ingest_blimp(&dir, &IngestOptions::default())?)
    }
}

fn fresh_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_suite(run: &mut Run, suite: &TaskSuite, start: Instant) -> Result<(), CliError> {
    let dir = run.layout.suite();
    fresh_dir(&dir)?;
    export_suite(suite, &dir)?;
    log::info!(
        "{} paradigms, {} pairs, vocabulary {} -> {}",
        suite.paradigms.len(),
        suite.n_pairs(),
        suite.vocab.len(),
        dir.display()
    );
    let files = files_under(&dir)?;
    run.finish("suite", &files, start, vec![format!("suite hash {}", suite.hash())])
}

/// Synthetic minimal-pair suite from the config's spec.
pub fn generate(run: &mut Run) -> Result<(), CliError> {
    let start = Instant::now();
    let CorpusSource::Synthetic(spec) = &run.cfg.corpus else {
        return Err(CliError::Config {
            field: "corpus".into(),
            reason: "`generate` needs a synthetic corpus; use `ingest` for BLiMP records".into(),
        });
    };
    let suite = generate_suite(run.cfg.seed(), spec)?;
    write_suite(run, &suite, start)
}

/// BLiMP-format records into a suite.
pub fn ingest(run: &mut Run) -> Result<(), CliError> {
    let start = Instant::now();
    let CorpusSource::Blimp(src) = &run.cfg.corpus else {
        return Err(CliError::Config {
            field: "corpus".into(),
            reason: "`ingest` needs a `blimp` corpus section".into(),
        });
    };
    let opts = IngestOptions {
        vocab: None,
        max_len: Some(run.cfg.model.context_length),
        split_seed: src.split_seed,
    };
    let suite = ingest_blimp(&src.path, &opts)?;
    write_suite(run, &suite, start)
}

fn pretrain_sentences(run: &Run, suite: &TaskSuite) -> Result<Vec<Vec<u32>>, CliError> {
    match &run.cfg.corpus {
        CorpusSource::Synthetic(_) => {
            let pc = &run.cfg.pretrain_corpus;
            Ok(make_pretrain_corpus(suite, run.cfg.seed(), pc.n_sentences, &pc.hyper())?.train)
        }
        CorpusSource::Blimp(src) => {
            let text = fs::read_to_string(&src.pretrain_text)?;
            let ctx = run.cfg.model.context_length;
            Ok(text
                .lines()
                .map(|l| {
                    let mut ids = suite.vocab.tokenize(l);
                    ids.truncate(ctx);
                    ids
                })
                .filter(|ids| !ids.is_empty())
                .collect())
        }
    }
}

fn read_losses(path: &Path, upto: u64) -> Result<Vec<(u64, usize, String)>, CliError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let mut it = line.splitn(3, ',');
        let (Some(step), Some(epoch), Some(loss)) = (it.next(), it.next(), it.next()) else {
            continue;
        };
        let (Ok(step), Ok(epoch)) = (step.parse::<u64>(), epoch.parse::<usize>()) else {
            continue;
        };
        if step <= upto {
            rows.push((step, epoch, loss.to_string()));
        }
    }
    Ok(rows)
}

fn write_losses(path: &Path, rows: &[(u64, usize, String)]) -> Result<(), CliError> {
    let mut s = String::from("step,epoch,loss\n");
    for (step, epoch, loss) in rows {
        let _ = writeln!(s, "{step},{epoch},{loss}");
    }
    fs::write(path, s)?;
    Ok(())
}

/// Trains from the latest saved checkpoint (or the initialization) up to
/// the configured epoch count.
pub fn pretrain(run: &mut Run) -> Result<(), CliError> {
    let start = Instant::now();
    let suite = run.load_suite()?;
    let corpus = pretrain_sentences(run, &suite)?;
    let config = run.cfg.model.lm_config(suite.vocab.len());
    let hyper = run.cfg.pretrain.hyper(run.cfg.seed());
    fs::create_dir_all(run.layout.checkpoints())?;
    let existing = run.layout.checkpoint_epochs()?;
    let resume_from = existing.iter().rev().find(|&&e| e <= hyper.epochs).copied();
    let base = match resume_from {
        Some(e) => {
            let c = Checkpoint::load(run.layout.checkpoint(e))?;
            if c.config() != &config || c.seed != hyper.seed {
                return Err(CliError::Config {
                    field: "model".into(),
                    reason: format!(
                        "saved checkpoints in {} come from another model or seed; use a fresh --out",
                        run.layout.checkpoints().display()
                    ),
                });
            }
            log::info!("resuming from epoch {e}");
            Some(c)
        }
        None => None,
    };
    let start_step = base.as_ref().map_or(0, |c| c.step);
    let steps_per_epoch = corpus.len().div_ceil(hyper.batch.max(1)) as u64;
    let mut rows = read_losses(&run.layout.loss_csv(), start_step)?;
    let result: Result<PretrainRun<f64>, TrainError<f64>> = match base {
        Some(c) => lm::resume(c, &corpus, &hyper),
        None => lm::pretrain(config, &corpus, &hyper),
    };
    let push = |rows: &mut Vec<(u64, usize, String)>, losses: &[f64]| {
        for (k, l) in losses.iter().enumerate() {
            let step = start_step + k as u64 + 1;
            rows.push((step, (step - 1).div_ceil(steps_per_epoch.max(1)).max(1) as usize, l.to_string()));
        }
    };
    match result {
        Ok(out) => {
            push(&mut rows, &out.losses);
            for c in &out.checkpoints {
                c.save(run.layout.checkpoint(c.epoch))?;
            }
            write_losses(&run.layout.loss_csv(), &rows)?;
            let files = files_under(&run.layout.pretrain())?;
            log::info!("{} optimizer steps, {} checkpoints", rows.len(), run.layout.checkpoint_epochs()?.len());
            run.finish("pretrain", &files, start, Vec::new())
        }
        Err(TrainError::Diverged { step, last_good, losses }) => {
            push(&mut rows, &losses);
            write_losses(&run.layout.loss_csv(), &rows)?;
            last_good.save(run.layout.checkpoints().join(format!("diverged_step_{step}.ckpt")))?;
            let files = files_under(&run.layout.pretrain())?;
            run.finish("pretrain", &files, start, vec![format!("diverged at step {step}")])?;
            Err(CliError::Diverged(step))
        }
        Err(TrainError::Model(e)) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientTaskRecord {
    pub task: String,
    pub subspace_size: usize,
    pub param_fraction: Option<f64>,
    pub mass_fraction: Option<f64>,
    pub dump: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientManifest {
    pub checkpoint: String,
    pub epoch: usize,
    pub step: u64,
    pub epsilon: f64,
    pub tasks: Vec<GradientTaskRecord>,
    pub seconds: f64,
}

fn write_gradient_probe(dir: &Path, probe: &GradientProbe, seconds: f64) -> Result<Vec<PathBuf>, CliError> {
    let dumps = dir.join("gradients");
    let mut paths = probe.write_dumps(&dumps)?;
    let tasks = probe
        .tasks
        .iter()
        .map(|t| GradientTaskRecord {
            task: t.task.clone(),
            subspace_size: t.subspace_size,
            param_fraction: t.delta.as_ref().map(|d| d.param_fraction()),
            mass_fraction: t.delta.as_ref().map(|d| d.mass_fraction()),
            dump: t.delta.as_ref().map(|_| format!("gradients/{}.tsgd", t.task)),
            error: t.error.clone(),
        })
        .collect();
    let m = GradientManifest {
        checkpoint: probe.checkpoint.clone(),
        epoch: probe.epoch,
        step: probe.step,
        epsilon: probe.epsilon,
        tasks,
        seconds,
    };
    let path = dir.join("gradients.json");
    fs::write(&path, serde_json::to_string_pretty(&m)? + "\n")?;
    paths.push(path);
    Ok(paths)
}

fn read_gradient_probe(dir: &Path) -> Result<(GradientManifest, GradientProbe), CliError> {
    let path = dir.join("gradients.json");
    require(&path)?;
    let m: GradientManifest = serde_json::from_slice(&fs::read(&path)?)?;
    let mut tasks = Vec::with_capacity(m.tasks.len());
    for t in &m.tasks {
        let delta = match &t.dump {
            Some(rel) => {
                let p = dir.join(rel);
                require(&p)?;
                Some(SubspaceDelta::load(&p)?)
            }
            None => None,
        };
        tasks.push(ProbedTask {
            task: t.task.clone(),
            subspace_size: t.subspace_size,
            delta,
            error: t.error.clone(),
        });
    }
    let probe = GradientProbe {
        checkpoint: m.checkpoint.clone(),
        epoch: m.epoch,
        step: m.step,
        epsilon: m.epsilon,
        tasks,
    };
    Ok((m, probe))
}

/// Gradient probe (and, unless `gradient_only`, transfer probe) of the
/// selected checkpoints.
pub fn probe(run: &mut Run, opts: &ProbeOptions) -> Result<(), CliError> {
    let suite = run.load_suite()?;
    let epochs = run.layout.checkpoint_epochs()?;
    let Some(&last) = epochs.last() else {
        return Err(CliError::MissingArtifact(run.layout.checkpoints()));
    };
    let selected = match opts.selector {
        Selector::Final => vec![last],
        Selector::All => epochs.clone(),
        Selector::Epoch(e) => {
            require(&run.layout.checkpoint(e))?;
            vec![e]
        }
    };
    let hyper = run.cfg.probe.tune_hyper();
    let (mut failed, mut total) = (0, 0);
    for epoch in selected {
        let start = Instant::now();
        let path = run.layout.checkpoint(epoch);
        let ckpt: Checkpoint = LmCheckpoint::load(&path)?;
        let dir = run.layout.probe(epoch);
        fresh_dir(&dir)?;
        let g = gradient_probe(&ckpt, &suite, hyper.epsilon)?;
        let mut notes: Vec<String> = g
            .tasks
            .iter()
            .filter_map(|t| t.error.as_ref().map(|e| format!("excluded {}: {e}", t.task)))
            .collect();
        let mut files = write_gradient_probe(&dir, &g, start.elapsed().as_secs_f64())?;
        if !opts.gradient_only {
            let (tts, mut pm) = transfer_probe(&path, &suite, &hyper, opts.jobs)?;
            let tts_path = dir.join("tts.csv");
            fs::write(&tts_path, tts.to_csv())?;
            pm.checkpoint_path = PathBuf::from(run.layout.relative(&path));
            pm.artifacts = vec![PathBuf::from("tts.csv")];
            let json = dir.join("transfer.json");
            fs::write(&json, serde_json::to_string_pretty(&pm)? + "\n")?;
            files.extend([tts_path, json]);
            let f = pm.failed_rows();
            notes.extend(pm.rows.iter().filter_map(|r| r.error.as_ref().map(|e| format!("row {} failed: {e}", r.task))));
            if f == pm.rows.len() {
                run.finish(&format!("probe/epoch_{epoch:03}"), &files, start, notes)?;
                return Err(CliError::ProbeFailed(epoch));
            }
            failed += f;
            total += pm.rows.len();
        }
        log::info!("probed epoch {epoch} in {:.1}s", start.elapsed().as_secs_f64());
        run.finish(&format!("probe/epoch_{epoch:03}"), &files, start, notes)?;
    }
    if failed > 0 {
        return Err(CliError::PartialProbe { failed, total });
    }
    Ok(())
}

/// One row of the correlation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub block: String,
    pub x: String,
    pub y: String,
    pub r: Option<f64>,
    pub abs_r: Option<f64>,
    pub p_perm: Option<f64>,
    pub null_q95: Option<f64>,
    pub n_pairs: Option<usize>,
    pub note: String,
}

/// The three comparison blocks: TTS against each gradient space, then TTS
/// and GTS_CS against the vocabulary controls and the phenomenon grouping.
pub const COMPARISONS: [(&str, &str, &str); 9] = [
    ("tts_vs_gts", "tts", "gts_j"),
    ("tts_vs_gts", "tts", "gts_cs"),
    ("tts_vs_gts", "tts", "gts_jcs"),
    ("tts_vs_hypotheses", "tts", "nvo"),
    ("tts_vs_hypotheses", "tts", "wd"),
    ("tts_vs_hypotheses", "tts", "phenomenon"),
    ("gts_cs_vs_hypotheses", "gts_cs", "nvo"),
    ("gts_cs_vs_hypotheses", "gts_cs", "wd"),
    ("gts_cs_vs_hypotheses", "gts_cs", "phenomenon"),
];

pub fn correlation_table(spaces: &[TaskSpace], permutations: usize, seed: u64) -> Vec<CorrelationRow> {
    let find = |tag: &str| spaces.iter().find(|s| s.metric.tag() == tag);
    COMPARISONS
        .iter()
        .map(|&(block, x, y)| {
            let mut row = CorrelationRow {
                block: block.into(),
                x: x.into(),
                y: y.into(),
                r: None,
                abs_r: None,
                p_perm: None,
                null_q95: None,
                n_pairs: None,
                note: String::new(),
            };
            match (find(x), find(y)) {
                (Some(a), Some(b)) => match correlate_spaces(a, b, permutations, seed) {
                    Ok(c) => {
                        row.r = Some(c.r);
                        row.abs_r = c.abs_r;
                        row.p_perm = Some(c.p_perm);
                        row.null_q95 = Some(c.null_q95);
                        row.n_pairs = Some(c.n_pairs);
                    }
                    Err(e) => row.note = e.to_string().replace(',', ";"),
                },
                _ => row.note = "space not available".into(),
            }
            row
        })
        .collect()
}

pub fn correlation_csv(rows: &[CorrelationRow]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("block,x,y,r,abs_r,p_perm,null_q95,n_pairs,note\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.block,
            r.x,
            r.y,
            opt(r.r),
            opt(r.abs_r),
            opt(r.p_perm),
            opt(r.null_q95),
            r.n_pairs.map(|n| n.to_string()).unwrap_or_default(),
            r.note
        );
    }
    s
}

fn within_csv(spaces: &[TaskSpace], suite: &TaskSuite) -> Result<String, CliError> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("space,group,mean,std\n");
    for sp in spaces.iter().filter(|s| matches!(s.metric, Metric::Transfer | Metric::Jaccard | Metric::Cosine | Metric::JaccardCosine)) {
        let st = within_phenomenon_stats(sp, suite)?;
        for (ph, v) in &st.per_phenomenon {
            let _ = writeln!(s, "{},{ph},{},{}", sp.metric.tag(), opt(v.map(|x| x.0)), opt(v.map(|x| x.1)));
        }
        let _ = writeln!(s, "{},all_within,{},", sp.metric.tag(), opt(st.within_mean));
        let _ = writeln!(s, "{},all_across,{},", sp.metric.tag(), opt(st.across_mean));
    }
    Ok(s)
}

/// Every space of one probed checkpoint: gradient spaces from the dumps,
/// TTS when the transfer probe ran, plus the suite-level controls.
pub fn spaces_for(
    dir: &Path,
    probe: &GradientProbe,
    controls: &[TaskSpace],
    union_cosine: bool,
) -> Result<Vec<TaskSpace>, CliError> {
    let j = jaccard_space(&probe.tasks)?;
    let cs = cosine_space(&probe.tasks, union_cosine)?;
    let jcs = weighted_space(&j, &cs)?;
    let mut out = Vec::new();
    let tts_path = dir.join("tts.csv");
    if tts_path.is_file() {
        let tts = TaskSpace::from_csv(&fs::read_to_string(&tts_path)?, Metric::Transfer, probe.checkpoint.clone())?;
        tts.check_order(&j)?;
        out.push(tts);
    }
    out.extend([j, cs, jcs]);
    out.extend(controls.iter().cloned());
    Ok(out)
}

/// Spaces, correlations, within-phenomenon statistics and heatmaps for
/// every probed checkpoint, plus the series across them.
pub fn analyze(run: &mut Run) -> Result<(), CliError> {
    let start = Instant::now();
    let suite = run.load_suite()?;
    let epochs = run.layout.probed_epochs()?;
    if epochs.is_empty() {
        let last = run.layout.checkpoint_epochs()?.last().copied().unwrap_or(0);
        return Err(CliError::MissingArtifact(run.layout.probe(last).join("gradients.json")));
    }
    let controls = vec![
        phenomenon_hypothesis(&suite).to_space(),
        nvo_control(&suite),
        wasserstein_control(&suite),
    ];
    let out = run.layout.analysis();
    fresh_dir(&out)?;
    let mut files = Vec::new();
    let mut probes = Vec::new();
    for &epoch in &epochs {
        let dir = run.layout.probe(epoch);
        let (_, probe) = read_gradient_probe(&dir)?;
        let spaces = spaces_for(&dir, &probe, &controls, run.cfg.probe.union_cosine)?;
        let adir = run.layout.analysis_epoch(epoch);
        let hdir = adir.join("heatmaps");
        fs::create_dir_all(&hdir)?;
        for s in &spaces {
            let tag = s.metric.tag();
            let csv = adir.join(format!("{tag}.csv"));
            fs::write(&csv, s.to_csv())?;
            let svg = hdir.join(format!("{tag}.svg"));
            fs::write(&svg, heatmap(s, &format!("{tag} (epoch {epoch})")))?;
            files.extend([csv, svg]);
        }
        let table = correlation_table(&spaces, run.cfg.probe.permutations, run.cfg.seed());
        let p = adir.join("correlations.csv");
        fs::write(&p, correlation_csv(&table))?;
        files.push(p);
        let p = adir.join("within.csv");
        fs::write(&p, within_csv(&spaces, &suite)?)?;
        files.push(p);
        probes.push(probe);
    }
    let series = series_from_probes(&probes, &suite)?;
    let p = out.join("series.csv");
    fs::write(&p, series_csv(&series))?;
    files.push(p);
    log::info!("analyzed {} checkpoints in {:.1}s", epochs.len(), start.elapsed().as_secs_f64());
    run.finish("analyze", &files, start, vec![
        "wd ground metric: unit-spaced bins along the train-split frequency ranking".into(),
    ])
}

fn csv_rows(path: &Path) -> Result<Vec<Vec<String>>, CliError> {
    require(path)?;
    Ok(fs::read_to_string(path)?
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect())
}

fn markdown_table(rows: &[Vec<String>]) -> String {
    let mut s = String::new();
    for (k, r) in rows.iter().enumerate() {
        let _ = writeln!(s, "| {} |", r.join(" | "));
        if k == 0 {
            let _ = writeln!(s, "|{}", "---|".repeat(r.len()));
        }
    }
    s
}

fn short(v: &str) -> String {
    if v.parse::<i64>().is_ok() {
        return v.to_string();
    }
    v.parse::<f64>().map(|x| format!("{x:.4}")).unwrap_or_else(|_| v.to_string())
}

/// Markdown summary of the final analyzed checkpoint.
pub fn report(run: &mut Run) -> Result<(), CliError> {
    let start = Instant::now();
    let epochs = run.layout.probed_epochs()?;
    let Some(&epoch) = epochs.last() else {
        return Err(CliError::MissingArtifact(run.layout.analysis()));
    };
    let adir = run.layout.analysis_epoch(epoch);
    let corr = csv_rows(&adir.join("correlations.csv"))?;
    let within = csv_rows(&adir.join("within.csv"))?;
    let series = csv_rows(&run.layout.analysis().join("series.csv"))?;
    let (gm, _) = read_gradient_probe(&run.layout.probe(epoch))?;
    let mut s = String::new();
    let _ = writeln!(s, "# Task-space report\n");
    let _ = writeln!(s, "Seed {}, checkpoint epoch {epoch} (`{}`).\n", run.cfg.seed(), &gm.checkpoint[..16]);
    let _ = writeln!(s, "## Correlations\n");
    let corr: Vec<Vec<String>> = corr
        .iter()
        .enumerate()
        .map(|(k, r)| if k == 0 { r.clone() } else { r.iter().map(|v| short(v)).collect() })
        .collect();
    s.push_str(&markdown_table(&corr));
    let _ = writeln!(s, "\nWD uses unit-spaced bins along the train-split token frequency ranking.\n");
    let _ = writeln!(s, "## Gradient subspaces (epsilon = {})\n", gm.epsilon);
    let mut rows = vec![vec!["task".to_string(), "size".into(), "param_fraction".into(), "mass_fraction".into()]];
    let (mut pf, mut mf, mut n) = (0.0, 0.0, 0);
    for t in &gm.tasks {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "excluded".into());
        rows.push(vec![t.task.clone(), t.subspace_size.to_string(), f(t.param_fraction), f(t.mass_fraction)]);
        if let (Some(p), Some(m)) = (t.param_fraction, t.mass_fraction) {
            pf += p;
            mf += m;
            n += 1;
        }
    }
    s.push_str(&markdown_table(&rows));
    if n > 0 {
        let _ = writeln!(
            s,
            "\nMean parameter fraction {:.4}, mean mass fraction {:.4}. Reference scale: 5% of parameters carrying 81% of the mass.\n",
            pf / n as f64,
            mf / n as f64
        );
    }
    let _ = writeln!(s, "## Within and across phenomena\n");
    s.push_str(&markdown_table(&within));
    let _ = writeln!(s, "\n## Checkpoint series\n");
    s.push_str(&markdown_table(&series));
    let path = run.layout.report();
    fs::write(&path, s)?;
    run.finish("report", &[path], start, Vec::new())
}
