//! BLiMP-format line-delimited records: ingestion and suite export.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{split_words, CorpusError, MinimalPair, Paradigm, SuiteOrigin, TaskSuite, Vocab};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlimpRecord {
    pub sentence_good: String,
    pub sentence_bad: String,
    #[serde(rename = "UID")]
    pub uid: String,
    pub linguistics_term: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestParadigm {
    pub id: String,
    pub phenomenon: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<String>,
}

/// Written next to exported record files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    pub origin: SuiteOrigin,
    pub suite_hash: String,
    pub paradigms: Vec<ManifestParadigm>,
    pub vocabulary: Vocab,
}

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Vocabulary to map words into; unknown words become `<unk>`. Without
    /// one the vocabulary is built from the records (or taken from a
    /// manifest in the directory).
    pub vocab: Option<Vocab>,
    /// Sentences longer than this many tokens are truncated.
    pub max_len: Option<usize>,
    pub split_seed: u64,
}

fn record_files(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CorpusError::NoRecords(dir.to_path_buf()));
    }
    Ok(files)
}

fn parse_line(path: &Path, line: usize, text: &str) -> Result<BlimpRecord, CorpusError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CorpusError::Record {
        path: path.to_path_buf(),
        line,
        reason: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| CorpusError::Record {
        path: path.to_path_buf(),
        line,
        reason: "record is not a JSON object".into(),
    })?;
    let field = |name: &'static str| -> Result<String, CorpusError> {
        match obj.get(name) {
            None | Some(serde_json::Value::Null) => Err(CorpusError::MissingField {
                path: path.to_path_buf(),
                line,
                field: name,
            }),
            Some(serde_json::Value::String(s)) => Ok(s.clone()),
            Some(other) => Err(CorpusError::Record {
                path: path.to_path_buf(),
                line,
                reason: format!("field `{name}` must be a string, got {other}"),
            }),
        }
    };
    Ok(BlimpRecord {
        sentence_good: field("sentence_good")?,
        sentence_bad: field("sentence_bad")?,
        uid: field("UID")?,
        linguistics_term: field("linguistics_term")?,
    })
}

/// Reads every `*.jsonl` file in `dir` (in file-name order) into a suite
/// grouped by `UID`, with phenomena from `linguistics_term`.
pub fn ingest_blimp(dir: impl AsRef<Path>, opts: &IngestOptions) -> Result<TaskSuite, CorpusError> {
    let dir = dir.as_ref();
    let manifest: Option<SuiteManifest> = match fs::read(dir.join(MANIFEST_FILE)) {
        Ok(bytes) => Some(serde_json::from_slice(&bytes)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e.into()),
    };

    struct Group {
        phenomenon: String,
        file: PathBuf,
        records: Vec<BlimpRecord>,
    }
    let mut groups: Vec<(String, Group)> = Vec::new();
    let mut by_uid: HashMap<String, usize> = HashMap::new();
    for path in record_files(dir)? {
        let text = fs::read_to_string(&path)?;
        let mut n = 0;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec = parse_line(&path, i + 1, line)?;
            n += 1;
            match by_uid.get(&rec.uid) {
                Some(&g) if groups[g].1.file != path => {
                    return Err(CorpusError::DuplicateUid {
                        uid: rec.uid,
                        first: groups[g].1.file.clone(),
                        second: path,
                    })
                }
                Some(&g) => groups[g].1.records.push(rec),
                None => {
                    by_uid.insert(rec.uid.clone(), groups.len());
                    groups.push((
                        rec.uid.clone(),
                        Group {
                            phenomenon: rec.linguistics_term.clone(),
                            file: path.clone(),
                            records: vec![rec],
                        },
                    ));
                }
            }
        }
        if n == 0 {
            return Err(CorpusError::EmptyFile { path });
        }
    }

    let mut frames: HashMap<String, Option<String>> = HashMap::new();
    if let Some(m) = &manifest {
        let rank: HashMap<&str, usize> = m.paradigms.iter().enumerate().map(|(i, p)| (p.id.as_str(), i)).collect();
        groups.sort_by_key(|(uid, _)| rank.get(uid.as_str()).copied().unwrap_or(usize::MAX));
        frames = m.paradigms.iter().map(|p| (p.id.clone(), p.frame.clone())).collect();
    }
    let (origin, split_seed) = match &manifest {
        Some(m) if opts.vocab.is_none() => {
            let seed = match m.origin {
                SuiteOrigin::Synthetic { seed, .. } => seed,
                SuiteOrigin::Ingested { split_seed } => split_seed,
            };
            (m.origin.clone(), seed)
        }
        _ => (
            SuiteOrigin::Ingested {
                split_seed: opts.split_seed,
            },
            opts.split_seed,
        ),
    };
    let vocab = match (&opts.vocab, &manifest) {
        (Some(v), _) => v.clone(),
        (None, Some(m)) => m.vocabulary.clone(),
        (None, None) => Vocab::from_words(groups.iter().flat_map(|(_, g)| {
            g.records
                .iter()
                .flat_map(|r| split_words(&r.sentence_good).into_iter().chain(split_words(&r.sentence_bad)))
        })),
    };

    let mut unknown = 0usize;
    let mut truncated = 0usize;
    let mut tokenize = |text: &str| {
        let mut ids = vocab.tokenize_counting(text, &mut unknown);
        if let Some(max) = opts.max_len {
            if ids.len() > max {
                ids.truncate(max);
                truncated += 1;
            }
        }
        ids
    };
    let mut paradigms = Vec::with_capacity(groups.len());
    for (uid, g) in groups {
        let pairs = g
            .records
            .iter()
            .map(|r| MinimalPair {
                good: tokenize(&r.sentence_good),
                bad: tokenize(&r.sentence_bad),
                paradigm: uid.clone(),
            })
            .collect();
        let frame = frames.get(&uid).cloned().flatten();
        paradigms.push(Paradigm::new(uid, g.phenomenon, frame, pairs, split_seed)?);
    }
    if unknown > 0 {
        log::warn!("{unknown} out-of-vocabulary words mapped to <unk>");
    }
    if truncated > 0 {
        log::warn!("{truncated} sentences truncated to the context length");
    }
    Ok(TaskSuite {
        origin,
        paradigms,
        vocab,
    })
}

/// Writes one `<paradigm>.jsonl` file per paradigm plus a manifest.
pub fn export_suite(suite: &TaskSuite, dir: impl AsRef<Path>) -> Result<(), CorpusError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for p in &suite.paradigms {
        let mut out = String::new();
        for pair in &p.pairs {
            let rec = BlimpRecord {
                sentence_good: suite.vocab.detokenize(&pair.good),
                sentence_bad: suite.vocab.detokenize(&pair.bad),
                uid: p.id.clone(),
                linguistics_term: p.phenomenon.clone(),
            };
            out.push_str(&serde_json::to_string(&rec)?);
            out.push('\n');
        }
        fs::write(dir.join(format!("{}.jsonl", p.id)), out)?;
    }
    let manifest = SuiteManifest {
        origin: suite.origin.clone(),
        suite_hash: suite.hash(),
        paradigms: suite
            .paradigms
            .iter()
            .map(|p| ManifestParadigm {
                id: p.id.clone(),
                phenomenon: p.phenomenon.clone(),
                frame: p.frame.clone(),
            })
            .collect(),
        vocabulary: suite.vocab.clone(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}
