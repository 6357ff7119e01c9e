use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use natpert::challenge::{self, CaseLabel, ModelPredictions, RobustnessRule};
use natpert::dataset::{read_jsonl, write_jsonl, MrcDataset, MultiPassageRecord};
use natpert::diff::{mine_page, CandidatePair, PipelineConfig};
use natpert::harvest::{
    self, fetch_history, ingest_dump, parse_timestamp, ApiClient, ApiConfig, HarvestError,
    HarvestOptions, HttpTransport, PageRef, RevisionCache,
};
use natpert::metrics::{self, MetricKind, PredictionSet, UnanswerablePhraseSet};
use natpert::synth::{self, OcrMap, PerturbMethod, PerturbSpec, Scope, SubstitutionResource};
use natpert::testset::{
    build_augmentation, build_paired_sets, perturb_multipassage, CandidateIndex, PairedTestSet,
};

use crate::config::Config;
use crate::manifest::{now, ManifestBuilder};
use crate::{write_json, ChallengeStep, Cli, Command, TitleArgs, UsageError};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn require_file(path: &Path) -> anyhow::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!(
            "input file {} does not exist",
            path.display()
        )))
    }
}

fn read_titles(args: &TitleArgs, manifest: &mut ManifestBuilder) -> anyhow::Result<Vec<String>> {
    let mut titles = args.titles.clone();
    if let Some(path) = &args.titles_file {
        require_file(path)?;
        manifest.input(path);
        let text = std::fs::read_to_string(path)?;
        titles.extend(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from),
        );
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for t in titles {
        let page = PageRef::new(&t).map_err(|e| usage(e.to_string()))?;
        if seen.insert(page.title.clone()) {
            out.push(page.title);
        }
    }
    Ok(out)
}

fn harvest_options(
    config: &Config,
    flag: Option<&String>,
    refresh: bool,
) -> anyhow::Result<HarvestOptions> {
    let raw = flag.or(config.harvest.max_timestamp.as_ref());
    let max_timestamp = match raw {
        Some(s) => Some(parse_timestamp(s).map_err(|e| usage(e.to_string()))?),
        None => None,
    };
    Ok(HarvestOptions {
        max_timestamp,
        harvested_at: Some(now()),
        refresh,
    })
}

fn load_candidates(path: &Path) -> anyhow::Result<Vec<CandidatePair>> {
    require_file(path)?;
    read_jsonl(path).with_context(|| format!("reading candidates {}", path.display()))
}

fn load_dataset(path: &Path) -> anyhow::Result<MrcDataset> {
    require_file(path)?;
    MrcDataset::load(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn write_paired(dir: &Path, set: &PairedTestSet) -> anyhow::Result<()> {
    set.original.write(&dir.join("original.json"))?;
    set.perturbed.write(&dir.join("perturbed.json"))?;
    write_json(&dir.join("provenance.json"), &set.provenance)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = Config::load(cli.global.config.as_deref())?;
    if let Some(seed) = cli.global.seed {
        config.pipeline.seed = seed;
    }
    let seed = config.pipeline.seed;
    let cache_root = cli.global.cache.clone();
    match cli.command {
        Command::Harvest {
            titles,
            max_timestamp,
            refresh,
            out_dir,
        } => {
            config.harvest.max_timestamp = max_timestamp.or(config.harvest.max_timestamp.take());
            let mut m = ManifestBuilder::new("harvest", &config, seed);
            let titles = read_titles(&titles, &mut m)?;
            if titles.is_empty() {
                return Err(usage("harvest needs --title or --titles"));
            }
            let opts = harvest_options(&config, None, refresh)?;
            let cache = RevisionCache::open(&cache_root)?;
            let h = &config.harvest;
            let api = ApiConfig {
                endpoint: h.endpoint.clone(),
                user_agent: h.user_agent.clone(),
                max_retries: h.max_retries,
                base_backoff: Duration::from_millis(h.backoff_ms),
                max_concurrent: h.max_concurrent,
            };
            let client = ApiClient::new(
                HttpTransport::new(&h.user_agent, Duration::from_secs(h.timeout_secs)),
                api,
            );
            let mut pages = Vec::new();
            let mut failures = 0;
            for title in &titles {
                let page = PageRef::new(title)?;
                match fetch_history(&page, &cache, &client, &opts) {
                    Ok(revs) => pages.push(json!({"title": title, "revisions": revs.len()})),
                    Err(e @ HarvestError::PageNotFound(_)) => {
                        log::warn!("{e}");
                        failures += 1;
                        pages.push(json!({"title": title, "error": e.to_string()}));
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            create_dir(&out_dir)?;
            write_json(
                &out_dir.join("harvest_report.json"),
                &json!({
                    "cache": cache_root.display().to_string(),
                    "pages": pages,
                    "requests": client.request_count(),
                }),
            )?;
            m.write(&out_dir)?;
            if failures == titles.len() {
                bail!("no page could be harvested");
            }
        }
        Command::IngestDump {
            dump,
            titles,
            max_timestamp,
            out_dir,
        } => {
            config.harvest.max_timestamp = max_timestamp.or(config.harvest.max_timestamp.take());
            let mut m = ManifestBuilder::new("ingest-dump", &config, seed);
            require_file(&dump)?;
            m.input(&dump);
            let titles = read_titles(&titles, &mut m)?;
            if titles.is_empty() {
                return Err(usage("ingest-dump needs --title or --titles"));
            }
            let opts = harvest_options(&config, None, false)?;
            let cache = RevisionCache::open(&cache_root)?;
            let wanted: HashSet<String> = titles.iter().cloned().collect();
            let written = ingest_dump(&dump, &wanted, &cache, &opts)?;
            let pages: BTreeMap<&str, usize> = titles
                .iter()
                .map(|t| (t.as_str(), cache.rev_ids(t).len()))
                .collect();
            create_dir(&out_dir)?;
            write_json(
                &out_dir.join("ingest_report.json"),
                &json!({"new_revisions": written, "pages": pages}),
            )?;
            m.write(&out_dir)?;
        }
        Command::Mine {
            titles,
            min_paragraph_chars,
            similarity_threshold,
            out_dir,
        } => {
            if let Some(v) = min_paragraph_chars {
                config.pipeline.min_paragraph_chars = v;
            }
            if let Some(v) = similarity_threshold {
                config.pipeline.alignment_similarity_threshold = v;
            }
            let cfg = config.pipeline_config()?;
            let mut m = ManifestBuilder::new("mine", &config, seed);
            let cache = RevisionCache::open(&cache_root)?;
            let mut titles = read_titles(&titles, &mut m)?;
            if titles.is_empty() {
                titles = cache.titles();
            }
            if titles.is_empty() {
                bail!("the cache at {} holds no pages", cache_root.display());
            }
            let mined = mine_all(&titles, &cache, &cfg)?;
            let mut candidates = Vec::new();
            let mut pages = Vec::new();
            for (title, outcome) in titles.iter().zip(mined) {
                match outcome {
                    Ok(c) => {
                        pages.push(json!({"title": title, "candidates": c.len()}));
                        candidates.extend(c);
                    }
                    Err(reason) => pages.push(json!({"title": title, "skipped": reason})),
                }
            }
            create_dir(&out_dir)?;
            write_jsonl(&out_dir.join("candidates.jsonl"), &candidates)?;
            write_json(
                &out_dir.join("mine_report.json"),
                &json!({"total_candidates": candidates.len(), "pages": pages}),
            )?;
            m.write(&out_dir)?;
        }
        Command::BuildTestset {
            dataset,
            candidates,
            out_dir,
        } => {
            let cfg = config.pipeline_config()?;
            let mut m = ManifestBuilder::new("build-testset", &config, seed);
            let cands = load_candidates(&candidates)?;
            m.input(&candidates);
            m.input(&dataset);
            create_dir(&out_dir)?;
            if dataset.extension().is_some_and(|e| e == "jsonl") {
                require_file(&dataset)?;
                let records: Vec<MultiPassageRecord> = read_jsonl(&dataset)?;
                let index = CandidateIndex::new(&cands);
                let out: Vec<MultiPassageRecord> = records
                    .par_iter()
                    .filter_map(|r| perturb_multipassage(r, &index, &cfg))
                    .collect();
                if out.is_empty() {
                    bail!("no record had a supporting passage matching a candidate");
                }
                write_jsonl(&out_dir.join("perturbed.jsonl"), &out)?;
                write_json(
                    &out_dir.join("build_report.json"),
                    &json!({"records_in": records.len(), "records_out": out.len()}),
                )?;
            } else {
                let ds = load_dataset(&dataset)?;
                let set = build_paired_sets(&ds, &cands, &cfg)?;
                write_paired(&out_dir, &set)?;
                write_json(
                    &out_dir.join("build_report.json"),
                    &json!({
                        "contexts": set.original.context_count(),
                        "questions": set.original.question_count(),
                        "source_contexts": ds.context_count(),
                        "source_questions": ds.question_count(),
                    }),
                )?;
            }
            m.write(&out_dir)?;
        }
        Command::Augment {
            dataset,
            candidates,
            out_dir,
        } => {
            let cfg = config.pipeline_config()?;
            let mut m = ManifestBuilder::new("augment", &config, seed);
            let cands = load_candidates(&candidates)?;
            let train = load_dataset(&dataset)?;
            m.input(&candidates);
            m.input(&dataset);
            let aug = build_augmentation(&train, &cands, &cfg)?;
            let mut combined = train.clone();
            combined.name = format!("{}_with_natural", train.name);
            combined.articles.extend(aug.articles.iter().cloned());
            create_dir(&out_dir)?;
            aug.write(&out_dir.join("augmentation.json"))?;
            combined.write(&out_dir.join("augmented_train.json"))?;
            m.write(&out_dir)?;
        }
        Command::PerturbSynth {
            method,
            rate,
            resource,
            ocr_map,
            scope,
            input,
            out,
        } => {
            let method: PerturbMethod = method.parse().map_err(usage)?;
            if let Some(r) = rate {
                config.synth.rate = r;
            }
            let mut m = ManifestBuilder::new("perturb-synth", &config, seed);
            let ds = load_dataset(&input)?;
            m.input(&input);
            let resource = match &resource {
                Some(p) => {
                    require_file(p)?;
                    m.input(p);
                    Some(SubstitutionResource::load(p)?)
                }
                None if method.needs_resource() => {
                    return Err(usage(format!("{method:?} needs --resource")));
                }
                None => None,
            };
            let ocr = match &ocr_map {
                Some(p) => {
                    require_file(p)?;
                    m.input(p);
                    OcrMap::load(p)?
                }
                None => OcrMap::default(),
            };
            let mut spec = PerturbSpec {
                rate: config.synth.rate,
                ..PerturbSpec::new(method, seed)
            };
            if !(0.0..=1.0).contains(&spec.rate) {
                return Err(usage(format!("rate {} outside [0, 1]", spec.rate)));
            }
            match scope.as_deref() {
                Some("paragraph") => spec.scope = Scope::Paragraph,
                Some("sentence") => spec.scope = Scope::SentenceWise,
                _ => {}
            }
            let perturbed = synth::perturb_dataset(&ds, &spec, resource.as_ref(), &ocr)?;
            let dir = out
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("."));
            create_dir(&dir)?;
            perturbed.write(&out)?;
            m.write(&dir)?;
        }
        Command::Evaluate {
            dataset,
            predictions,
            metric,
            phrases,
            model_name,
            original_dataset,
            original_predictions,
            out_dir,
        } => {
            let metric: MetricKind = metric.parse().map_err(usage)?;
            let mut m = ManifestBuilder::new("evaluate", &config, seed);
            let phrases = match &phrases {
                Some(p) => {
                    require_file(p)?;
                    m.input(p);
                    UnanswerablePhraseSet::load(p)?
                }
                None => UnanswerablePhraseSet::default(),
            };
            let name = model_name.unwrap_or_else(|| {
                predictions
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()
            });
            let score = |ds: &Path,
                         preds: &Path,
                         m: &mut ManifestBuilder|
             -> anyhow::Result<metrics::ScoreReport> {
                let d = load_dataset(ds)?;
                require_file(preds)?;
                m.input(ds);
                m.input(preds);
                Ok(metrics::score(
                    &d,
                    &PredictionSet::load(preds, &name)?,
                    metric,
                    &phrases,
                )?)
            };
            let report = score(&dataset, &predictions, &mut m)?;
            let mut summary = json!({
                "model_name": report.model_name,
                "metric": report.metric,
                "headline": report.headline,
                "aggregates": report.aggregates,
                "counts": report.counts,
            });
            let mut full = serde_json::to_value(&report)?;
            if let (Some(od), Some(op)) = (&original_dataset, &original_predictions) {
                let base = score(od, op, &mut m)?;
                let change =
                    metrics::relative_change(100.0 * base.headline, 100.0 * report.headline)?;
                summary["original_headline"] = json!(base.headline);
                summary["relative_change"] = json!(change);
                full["original_headline"] = json!(base.headline);
                full["relative_change"] = json!(change);
            }
            println!("{}", serde_json::to_string_pretty(&summary)?);
            if let Some(dir) = out_dir {
                create_dir(&dir)?;
                write_json(&dir.join("report.json"), &full)?;
                m.write(&dir)?;
            }
        }
        Command::Challenge {
            step:
                ChallengeStep::Pool {
                    dev,
                    candidates,
                    out_dir,
                },
        } => {
            let mut m = ManifestBuilder::new("challenge pool", &config, seed);
            let dev_set = load_dataset(&dev)?;
            let cands = load_candidates(&candidates)?;
            m.input(&dev);
            m.input(&candidates);
            let pool = challenge::build_challenge_pool(&dev_set, &cands);
            if pool.entries.is_empty() {
                bail!("no candidate matched a dev context with a locatable answer");
            }
            let (prev, curr) = pool.to_datasets(&dev_set);
            create_dir(&out_dir)?;
            write_json(&out_dir.join("pool.json"), &pool)?;
            prev.write(&out_dir.join("pool_prev.json"))?;
            curr.write(&out_dir.join("pool_curr.json"))?;
            m.write(&out_dir)?;
        }
        Command::Challenge {
            step:
                ChallengeStep::Search {
                    pool,
                    dev,
                    predictions,
                    f1_threshold,
                    out_dir,
                },
        } => {
            if let Some(t) = f1_threshold {
                config.challenge.f1_threshold = t;
            }
            let rule = RobustnessRule::new(config.challenge.f1_threshold).map_err(usage)?;
            let mut m = ManifestBuilder::new("challenge search", &config, seed);
            require_file(&pool)?;
            m.input(&pool);
            let pool_data: challenge::ChallengePool =
                serde_json::from_str(&std::fs::read_to_string(&pool)?)
                    .with_context(|| format!("reading pool {}", pool.display()))?;
            let dev_set = load_dataset(&dev)?;
            m.input(&dev);
            let models = load_prediction_manifest(&predictions, &mut m)?;
            let outcome =
                challenge::build_challenge_set(&pool_data, &dev_set, &models, &rule, seed)?;
            create_dir(&out_dir)?;
            outcome
                .set
                .original
                .write(&out_dir.join("challenge_original.json"))?;
            outcome
                .set
                .perturbed
                .write(&out_dir.join("challenge_perturbed.json"))?;
            write_json(&out_dir.join("provenance.json"), &outcome.set.provenance)?;
            write_json(&out_dir.join("decisions.json"), &outcome.decisions)?;
            m.write(&out_dir)?;
        }
        Command::Analyze {
            original,
            perturbed,
            predictions,
            out_dir,
        } => {
            let mut m = ManifestBuilder::new("analyze", &config, seed);
            let o = load_dataset(&original)?;
            let p = load_dataset(&perturbed)?;
            m.input(&original);
            m.input(&perturbed);
            let models = load_prediction_manifest(&predictions, &mut m)?;
            let analysis = analyze(o, p, &models)?;
            create_dir(&out_dir)?;
            write_json(&out_dir.join("analysis.json"), &analysis)?;
            m.write(&out_dir)?;
        }
    }
    Ok(())
}

/// Mines pages in parallel. Pages without two revisions are skipped with
/// a reason; other failures abort.
fn mine_all(
    titles: &[String],
    cache: &RevisionCache,
    cfg: &PipelineConfig,
) -> anyhow::Result<Vec<Result<Vec<CandidatePair>, String>>> {
    titles
        .par_iter()
        .map(|t| {
            let page = PageRef::new(t)?;
            match mine_page(&page, cache, cfg) {
                Ok(c) => Ok(Ok(c)),
                Err(e @ harvest::HarvestError::InsufficientHistory { .. }) => {
                    log::warn!("{e}");
                    Ok(Err(e.to_string()))
                }
                Err(e) => Err(e.into()),
            }
        })
        .collect()
}

#[derive(Deserialize)]
struct PredictionManifest {
    models: Vec<ManifestModel>,
}

/// One model's two prediction files. `original`/`perturbed` and
/// `prev`/`curr` are interchangeable names.
#[derive(Deserialize)]
struct ManifestModel {
    name: String,
    #[serde(alias = "prev")]
    original: PathBuf,
    #[serde(alias = "curr")]
    perturbed: PathBuf,
}

fn load_prediction_manifest(
    path: &Path,
    m: &mut ManifestBuilder,
) -> anyhow::Result<Vec<ModelPredictions>> {
    require_file(path)?;
    m.input(path);
    let manifest: PredictionManifest = serde_json::from_str(&std::fs::read_to_string(path)?)
        .with_context(|| format!("reading prediction manifest {}", path.display()))?;
    if manifest.models.is_empty() {
        return Err(usage("prediction manifest lists no models"));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    manifest
        .models
        .into_iter()
        .map(|e| {
            let load =
                |p: &Path, m: &mut ManifestBuilder| -> anyhow::Result<BTreeMap<String, String>> {
                    let p = base.join(p);
                    require_file(&p)?;
                    m.input(&p);
                    Ok(PredictionSet::load(&p, &e.name)?.predictions)
                };
            let on_prev = load(&e.original, m)?;
            let on_curr = load(&e.perturbed, m)?;
            Ok(ModelPredictions {
                name: e.name,
                on_prev,
                on_curr,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct Analysis {
    label_counts: BTreeMap<String, usize>,
    labels: BTreeMap<String, Option<CaseLabel>>,
    /// Byte-level edit distance per perturbed context, keyed by its first qid.
    magnitudes: BTreeMap<String, usize>,
    /// Correlation between magnitude and C2W (vs C2C) over labelled questions.
    point_biserial: Option<f64>,
    point_biserial_note: Option<String>,
    answer_sentence_unmodified_pct: BTreeMap<String, Option<f64>>,
}

fn analyze(
    original: MrcDataset,
    perturbed: MrcDataset,
    models: &[ModelPredictions],
) -> anyhow::Result<Analysis> {
    let orig_paras: Vec<_> = original
        .articles
        .iter()
        .flat_map(|a| &a.paragraphs)
        .collect();
    let pert_paras: Vec<_> = perturbed
        .articles
        .iter()
        .flat_map(|a| &a.paragraphs)
        .collect();
    if orig_paras.len() != pert_paras.len() {
        return Err(usage(
            "original and perturbed sets have different numbers of contexts",
        ));
    }
    let qas: Vec<_> = original.qas().map(|(_, q)| q.clone()).collect();
    let orig_preds: Vec<_> = models.iter().map(|m| &m.on_prev).collect();
    let pert_preds: Vec<_> = models.iter().map(|m| &m.on_curr).collect();
    let labels = challenge::classify_cases(&orig_preds, &pert_preds, &qas);

    let mut label_counts = BTreeMap::new();
    for l in labels.values().flatten() {
        *label_counts.entry(format!("{l:?}")).or_insert(0) += 1;
    }
    let mut magnitudes = BTreeMap::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (o, p) in orig_paras.iter().zip(&pert_paras) {
        let mag = challenge::perturbation_magnitude(&o.context, &p.context);
        if let Some(q) = o.qas.first() {
            magnitudes.insert(q.qid.clone(), mag);
        }
        for q in &o.qas {
            match labels.get(&q.qid).copied().flatten() {
                Some(CaseLabel::C2W) => {
                    xs.push(mag as f64);
                    ys.push(1);
                }
                Some(CaseLabel::C2C) => {
                    xs.push(mag as f64);
                    ys.push(0);
                }
                _ => {}
            }
        }
    }
    let (point_biserial, point_biserial_note) = match challenge::point_biserial(&xs, &ys) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let set = PairedTestSet {
        original,
        perturbed,
        provenance: BTreeMap::new(),
    };
    let mut rates = BTreeMap::new();
    for label in [CaseLabel::C2W, CaseLabel::C2C] {
        let ids: HashSet<&str> = labels
            .iter()
            .filter(|(_, l)| **l == Some(label))
            .map(|(k, _)| k.as_str())
            .collect();
        rates.insert(
            format!("{label:?}"),
            challenge::answer_sentence_unmodified_rate(&set.restrict(&ids)),
        );
    }
    let all: HashSet<&str> = labels.keys().map(String::as_str).collect();
    rates.insert(
        "all".into(),
        challenge::answer_sentence_unmodified_rate(&set.restrict(&all)),
    );
    Ok(Analysis {
        label_counts,
        labels,
        magnitudes,
        point_biserial,
        point_biserial_note,
        answer_sentence_unmodified_pct: rates,
    })
}
