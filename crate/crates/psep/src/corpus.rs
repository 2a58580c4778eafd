//! On-disk corpus: a directory of 16-bit WAV files plus a tab-separated manifest.
//!
//! Manifest lines (no header): `id  mixture  source1 .. sourceC  snr_db  seed`,
//! paths relative to the corpus directory. The split is the id prefix.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use psep_core::datagen::{generate_item, item_id, CorpusSpec, MixtureItem, Split};
use psep_core::trainer::{parse_kv, ItemMapper};

use crate::fileio::{read_wav, write_wav};

pub const MANIFEST: &str = "manifest.tsv";
pub const SPEC_FILE: &str = "corpus.conf";

pub const CORPUS_KEYS: &[&str] = &["n_train", "n_valid", "n_test", "duration_s", "sample_rate_hz", "snr_lo_db", "snr_hi_db", "seed"];

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub mixture: PathBuf,
    pub sources: Vec<PathBuf>,
    pub snr_db: f64,
    pub seed: u64,
}

impl ManifestEntry {
    pub fn split(&self) -> Option<Split> {
        Split::of_id(&self.id)
    }

    fn line(&self) -> String {
        let mut cols = vec![self.id.clone(), self.mixture.display().to_string()];
        cols.extend(self.sources.iter().map(|p| p.display().to_string()));
        cols.push(format!("{:?}", self.snr_db));
        cols.push(self.seed.to_string());
        cols.join("\t")
    }
}

pub fn parse_manifest(text: &str) -> anyhow::Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 6 {
            bail!("manifest line {}: expected at least 6 tab-separated fields, got {}", n + 1, cols.len());
        }
        let k = cols.len();
        out.push(ManifestEntry {
            id: cols[0].to_string(),
            mixture: PathBuf::from(cols[1]),
            sources: cols[2..k - 2].iter().map(PathBuf::from).collect(),
            snr_db: cols[k - 2].parse().with_context(|| format!("manifest line {}: bad snr {:?}", n + 1, cols[k - 2]))?,
            seed: cols[k - 1].parse().with_context(|| format!("manifest line {}: bad seed {:?}", n + 1, cols[k - 1]))?,
        });
    }
    Ok(out)
}

pub fn corpus_spec_text(spec: &CorpusSpec) -> String {
    format!(
        "n_train = {}\nn_valid = {}\nn_test = {}\nduration_s = {:?}\nsample_rate_hz = {}\nsnr_lo_db = {:?}\nsnr_hi_db = {:?}\nseed = {}\n",
        spec.n_train, spec.n_valid, spec.n_test, spec.duration_s, spec.sample_rate_hz, spec.snr_range_db.0, spec.snr_range_db.1, spec.seed
    )
}

/// Applies one corpus key to `spec`.
pub fn set_corpus_key(spec: &mut CorpusSpec, key: &str, value: &str) -> anyhow::Result<()> {
    let v = value.trim();
    let bad = || format!("{key}: cannot parse {v:?}");
    match key {
        "n_train" => spec.n_train = v.parse().with_context(bad)?,
        "n_valid" => spec.n_valid = v.parse().with_context(bad)?,
        "n_test" => spec.n_test = v.parse().with_context(bad)?,
        "duration_s" => spec.duration_s = v.parse().with_context(bad)?,
        "sample_rate_hz" => spec.sample_rate_hz = v.parse().with_context(bad)?,
        "snr_lo_db" => spec.snr_range_db.0 = v.parse().with_context(bad)?,
        "snr_hi_db" => spec.snr_range_db.1 = v.parse().with_context(bad)?,
        "seed" => spec.seed = v.parse().with_context(bad)?,
        _ => bail!("unknown corpus key {key:?}"),
    }
    Ok(())
}

/// Reads a corpus spec file; keys not present keep their defaults.
pub fn parse_corpus_spec(text: &str) -> anyhow::Result<CorpusSpec> {
    let mut spec = CorpusSpec::default();
    for (k, v) in parse_kv(text)? {
        set_corpus_key(&mut spec, k, v)?;
    }
    Ok(spec)
}

/// Generates every item of `spec` and writes WAVs, the manifest and the spec file.
pub fn write_corpus<M: ItemMapper>(dir: &Path, spec: &CorpusSpec, mapper: &M) -> anyhow::Result<Vec<ManifestEntry>> {
    spec.validate()?;
    let wav_dir = dir.join("wav");
    fs::create_dir_all(&wav_dir).with_context(|| format!("cannot create {}", wav_dir.display()))?;
    let items = spec.items();
    let entries = mapper.map(items.len(), |k| -> anyhow::Result<ManifestEntry> {
        let (split, i) = items[k];
        let item = generate_item(spec, split, i)?;
        let id = item_id(split, i);
        let mixture = PathBuf::from("wav").join(format!("{id}.mix.wav"));
        write_wav(&dir.join(&mixture), &item.mixture)?;
        let mut sources = Vec::new();
        for (c, s) in item.sources.iter().enumerate() {
            let p = PathBuf::from("wav").join(format!("{id}.s{}.wav", c + 1));
            write_wav(&dir.join(&p), s)?;
            sources.push(p);
        }
        Ok(ManifestEntry { id, mixture, sources, snr_db: item.snr_db, seed: item.seed })
    });
    let entries = entries.into_iter().collect::<anyhow::Result<Vec<_>>>()?;
    let text: String = entries.iter().map(|e| e.line() + "\n").collect();
    fs::write(dir.join(MANIFEST), text).with_context(|| format!("cannot write manifest in {}", dir.display()))?;
    fs::write(dir.join(SPEC_FILE), corpus_spec_text(spec))?;
    Ok(entries)
}

pub fn read_manifest(dir: &Path) -> anyhow::Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_manifest(&text)
}

/// Loads items of one split. The mixture is rebuilt as the sum of the
/// decoded sources so additivity holds exactly after quantization.
pub fn load_split<M: ItemMapper>(dir: &Path, split: Split, mapper: &M) -> anyhow::Result<Vec<MixtureItem>> {
    let entries: Vec<ManifestEntry> = read_manifest(dir)?.into_iter().filter(|e| e.split() == Some(split)).collect();
    let items = mapper.map(entries.len(), |k| -> anyhow::Result<MixtureItem> {
        let e = &entries[k];
        let sources = e.sources.iter().map(|p| read_wav(&dir.join(p))).collect::<anyhow::Result<Vec<_>>>()?;
        Ok(MixtureItem::from_sources(e.id.clone(), sources, e.snr_db, e.seed)?)
    });
    items.into_iter().collect()
}
